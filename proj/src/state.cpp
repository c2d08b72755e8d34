#include "skiff/state.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <map>
#include <set>

#include <fcntl.h>
#include <unistd.h>

#include "skiff/errors.hpp"

namespace skiff {

namespace {

void put_u32le(std::vector<uint8_t>& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}
void put_u64le(std::vector<uint8_t>& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}
uint32_t get_u32le(std::span<const uint8_t> b, size_t& off) {
    if (off + 4 > b.size()) throw MalformedFrame("state record truncated");
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[off + i]) << (8 * i);
    off += 4;
    return v;
}
uint64_t get_u64le(std::span<const uint8_t> b, size_t& off) {
    if (off + 8 > b.size()) throw MalformedFrame("state record truncated");
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[off + i]) << (8 * i);
    off += 8;
    return v;
}
void put_str(std::vector<uint8_t>& out, const std::string& s) {
    put_u32le(out, static_cast<uint32_t>(s.size()));
    out.insert(out.end(), s.begin(), s.end());
}
std::string get_str(std::span<const uint8_t> b, size_t& off) {
    uint32_t n = get_u32le(b, off);
    if (off + n > b.size()) throw MalformedFrame("state record truncated");
    std::string s(reinterpret_cast<const char*>(b.data() + off), n);
    off += n;
    return s;
}

using EntryMap = std::map<StateKey, Value>;

std::vector<uint8_t> encode_entry_map(const EntryMap& entries) {
    std::vector<uint8_t> out;
    put_u64le(out, entries.size());
    for (const auto& [key, value] : entries) {
        put_str(out, key.first);
        put_str(out, key.second);
        std::vector<uint8_t> vbytes = value.encode();
        put_u64le(out, vbytes.size());
        out.insert(out.end(), vbytes.begin(), vbytes.end());
    }
    return out;
}

EntryMap decode_entry_map(std::span<const uint8_t> bytes, size_t& off) {
    EntryMap entries;
    uint64_t n = get_u64le(bytes, off);
    for (uint64_t i = 0; i < n; ++i) {
        std::string primary = get_str(bytes, off);
        std::string secondary = get_str(bytes, off);
        uint64_t vlen = get_u64le(bytes, off);
        if (off + vlen > bytes.size()) throw MalformedFrame("state value truncated");
        entries.emplace(StateKey{std::move(primary), std::move(secondary)},
                        Value::decode(bytes.subspan(off, vlen)));
        off += vlen;
    }
    return entries;
}

class MemoryBackend final : public StateBackend {
public:
    void put(const std::string& p, const std::string& s, const Value& v) override {
        entries_[{p, s}] = v;
    }
    std::optional<Value> get(const std::string& p, const std::string& s) const override {
        auto it = entries_.find({p, s});
        if (it == entries_.end()) return std::nullopt;
        return it->second;
    }
    void erase(const std::string& p, const std::string& s) override { entries_.erase({p, s}); }
    void erase_primary(const std::string& p) override {
        auto it = entries_.lower_bound({p, ""});
        while (it != entries_.end() && it->first.first == p) it = entries_.erase(it);
    }
    void clear() override { entries_.clear(); }
    std::vector<StateKey> keys() const override {
        std::vector<StateKey> out;
        out.reserve(entries_.size());
        for (const auto& [k, _] : entries_) out.push_back(k);
        return out;
    }
    const EntryMap& entries() const { return entries_; }

private:
    EntryMap entries_;
};

// Record ops in the durable log.
enum : uint8_t { kOpPut = 1, kOpErase = 2, kOpClear = 3, kOpErasePrimary = 4 };

constexpr char kStateMagic[8] = {'S', 'K', 'F', 'S', 'T', 'A', 'T', '1'};

class DurableBackend final : public StateBackend {
public:
    explicit DurableBackend(std::filesystem::path file) : path_(std::move(file)) {
        if (std::filesystem::exists(path_)) {
            replay();
            compact();  // also reopens the fd for appending
        } else {
            rewrite();
        }
    }

    ~DurableBackend() override {
        if (fd_ >= 0) ::close(fd_);
    }

    void put(const std::string& p, const std::string& s, const Value& v) override {
        mem_.put(p, s, v);
        std::vector<uint8_t> rec;
        rec.push_back(kOpPut);
        put_str(rec, p);
        put_str(rec, s);
        std::vector<uint8_t> vbytes = v.encode();
        put_u64le(rec, vbytes.size());
        rec.insert(rec.end(), vbytes.begin(), vbytes.end());
        append(rec);
    }

    std::optional<Value> get(const std::string& p, const std::string& s) const override {
        return mem_.get(p, s);
    }

    void erase(const std::string& p, const std::string& s) override {
        mem_.erase(p, s);
        std::vector<uint8_t> rec;
        rec.push_back(kOpErase);
        put_str(rec, p);
        put_str(rec, s);
        append(rec);
    }

    void erase_primary(const std::string& p) override {
        mem_.erase_primary(p);
        std::vector<uint8_t> rec;
        rec.push_back(kOpErasePrimary);
        put_str(rec, p);
        append(rec);
    }

    void clear() override {
        mem_.clear();
        rewrite();
    }

    std::vector<StateKey> keys() const override { return mem_.keys(); }

private:
    void append(const std::vector<uint8_t>& rec) {
        std::vector<uint8_t> framed;
        put_u64le(framed, rec.size());
        framed.insert(framed.end(), rec.begin(), rec.end());
        if (fd_ < 0) throw BackendUnavailable("durable state file not open: " + path_.string());
        size_t off = 0;
        while (off < framed.size()) {
            ssize_t n = ::write(fd_, framed.data() + off, framed.size() - off);
            if (n < 0) throw BackendUnavailable("write failed on " + path_.string());
            off += static_cast<size_t>(n);
        }
        if (::fdatasync(fd_) != 0) throw BackendUnavailable("fsync failed on " + path_.string());
        ++appended_ops_;
        if (appended_ops_ > 4 * mem_.entries().size() + 256) compact();
    }

    void replay() {
        std::vector<uint8_t> raw;
        {
            FILE* f = ::fopen(path_.c_str(), "rb");
            if (!f) throw BackendUnavailable("cannot open " + path_.string());
            ::fseek(f, 0, SEEK_END);
            long sz = ::ftell(f);
            ::fseek(f, 0, SEEK_SET);
            raw.resize(static_cast<size_t>(sz));
            if (sz > 0 && ::fread(raw.data(), 1, raw.size(), f) != raw.size()) {
                ::fclose(f);
                throw BackendUnavailable("cannot read " + path_.string());
            }
            ::fclose(f);
        }
        std::span<const uint8_t> b(raw);
        size_t off = 0;
        if (b.size() < 8 || std::memcmp(b.data(), kStateMagic, 8) != 0)
            throw VersionMismatch("not a state file: " + path_.string());
        off = 8;
        // Records may be truncated at the tail after a crash; stop at the
        // first incomplete one.
        while (off < b.size()) {
            size_t rec_start = off;
            uint64_t len;
            try {
                len = get_u64le(b, off);
            } catch (const MalformedFrame&) {
                break;
            }
            if (off + len > b.size()) {
                off = rec_start;
                break;
            }
            std::span<const uint8_t> rec = b.subspan(off, len);
            off += len;
            size_t roff = 0;
            if (rec.empty()) continue;
            uint8_t op = rec[roff++];
            try {
                switch (op) {
                    case kOpPut: {
                        std::string p = get_str(rec, roff);
                        std::string s = get_str(rec, roff);
                        uint64_t vlen = get_u64le(rec, roff);
                        if (roff + vlen > rec.size()) throw MalformedFrame("truncated put");
                        mem_.put(p, s, Value::decode(rec.subspan(roff, vlen)));
                        break;
                    }
                    case kOpErase: {
                        std::string p = get_str(rec, roff);
                        std::string s = get_str(rec, roff);
                        mem_.erase(p, s);
                        break;
                    }
                    case kOpErasePrimary:
                        mem_.erase_primary(get_str(rec, roff));
                        break;
                    case kOpClear:
                        mem_.clear();
                        break;
                    default:
                        throw MalformedFrame("unknown state op");
                }
            } catch (const MalformedFrame&) {
                break;
            }
        }
    }

    // Rewrite the file as a fresh snapshot of the live map (temp + rename).
    void rewrite() {
        std::filesystem::path tmp = path_;
        tmp += ".tmp";
        int fd = ::open(tmp.c_str(), O_CREAT | O_TRUNC | O_WRONLY, 0644);
        if (fd < 0) throw BackendUnavailable("cannot create " + tmp.string());
        std::vector<uint8_t> out(kStateMagic, kStateMagic + 8);
        for (const auto& [key, value] : mem_.entries()) {
            std::vector<uint8_t> rec;
            rec.push_back(kOpPut);
            put_str(rec, key.first);
            put_str(rec, key.second);
            std::vector<uint8_t> vbytes = value.encode();
            put_u64le(rec, vbytes.size());
            rec.insert(rec.end(), vbytes.begin(), vbytes.end());
            put_u64le(out, rec.size());
            out.insert(out.end(), rec.begin(), rec.end());
        }
        size_t off = 0;
        while (off < out.size()) {
            ssize_t n = ::write(fd, out.data() + off, out.size() - off);
            if (n < 0) {
                ::close(fd);
                throw BackendUnavailable("write failed on " + tmp.string());
            }
            off += static_cast<size_t>(n);
        }
        ::fdatasync(fd);
        ::close(fd);
        std::error_code ec;
        std::filesystem::rename(tmp, path_, ec);
        if (ec) throw BackendUnavailable("rename failed: " + ec.message());
        if (fd_ >= 0) ::close(fd_);
        fd_ = ::open(path_.c_str(), O_WRONLY | O_APPEND);
        if (fd_ < 0) throw BackendUnavailable("cannot reopen " + path_.string());
        appended_ops_ = 0;
    }

    void compact() { rewrite(); }

    std::filesystem::path path_;
    MemoryBackend mem_;
    int fd_ = -1;
    size_t appended_ops_ = 0;
};

}  // namespace

std::unique_ptr<StateBackend> make_memory_backend() { return std::make_unique<MemoryBackend>(); }

std::unique_ptr<StateBackend> make_durable_backend(const std::filesystem::path& file) {
    return std::make_unique<DurableBackend>(file);
}

StateObject::StateObject(std::string id, std::unique_ptr<StateBackend> backend)
    : id_(std::move(id)), backend_(std::move(backend)) {}

void StateObject::put(const std::string& p, const std::string& s, const Value& v) {
    std::lock_guard lk(mu_);
    backend_->put(p, s, v);
}

std::optional<Value> StateObject::get(const std::string& p, const std::string& s) const {
    std::lock_guard lk(mu_);
    return backend_->get(p, s);
}

void StateObject::erase(const std::string& p, const std::string& s) {
    std::lock_guard lk(mu_);
    backend_->erase(p, s);
}

void StateObject::erase_primary(const std::string& p) {
    std::lock_guard lk(mu_);
    backend_->erase_primary(p);
}

void StateObject::clear() {
    std::lock_guard lk(mu_);
    backend_->clear();
}

std::vector<StateKey> StateObject::keys() const {
    std::lock_guard lk(mu_);
    return backend_->keys();
}

uint64_t StateObject::content_hash() const {
    std::vector<uint8_t> bytes = encode_entries();
    // FNV-1a
    uint64_t h = 1469598103934665603ull;
    for (uint8_t b : bytes) {
        h ^= b;
        h *= 1099511628211ull;
    }
    return h;
}

std::vector<uint8_t> StateObject::encode_entries() const {
    std::lock_guard lk(mu_);
    EntryMap entries;
    for (const auto& key : backend_->keys()) {
        auto v = backend_->get(key.first, key.second);
        if (v) entries.emplace(key, *v);
    }
    return encode_entry_map(entries);
}

void StateObject::load_entries(std::span<const uint8_t> bytes) {
    size_t off = 0;
    EntryMap entries = decode_entry_map(bytes, off);
    std::lock_guard lk(mu_);
    backend_->clear();
    for (const auto& [key, value] : entries) backend_->put(key.first, key.second, value);
}

void StateObject::rebind(std::unique_ptr<StateBackend> backend) {
    std::lock_guard lk(mu_);
    backend->clear();
    for (const auto& key : backend_->keys()) {
        auto v = backend_->get(key.first, key.second);
        if (v) backend->put(key.first, key.second, *v);
    }
    backend_ = std::move(backend);
}

void StateHandle::put(const std::string& primary, const std::string& secondary, const Value& v) {
    if (!writable_) throw WriteOnReadOnly();
    obj_->put(primary, secondary, v);
}

void StateHandle::erase(const std::string& primary, const std::string& secondary) {
    if (!writable_) throw WriteOnReadOnly();
    obj_->erase(primary, secondary);
}

void StateHandle::erase_primary(const std::string& primary) {
    if (!writable_) throw WriteOnReadOnly();
    obj_->erase_primary(primary);
}

void StateHandle::clear() {
    if (!writable_) throw WriteOnReadOnly();
    obj_->clear();
}

SessionStates make_memory_states() {
    SessionStates s;
    s.client_info = std::make_shared<StateObject>(state_id::kClientInfo, make_memory_backend());
    s.train_session = std::make_shared<StateObject>(state_id::kTrainSession, make_memory_backend());
    s.client_training =
        std::make_shared<StateObject>(state_id::kClientTraining, make_memory_backend());
    s.client_selection =
        std::make_shared<StateObject>(state_id::kClientSelection, make_memory_backend());
    s.aggregation = std::make_shared<StateObject>(state_id::kAggregation, make_memory_backend());
    return s;
}

static std::filesystem::path durable_file(const std::filesystem::path& dir,
                                          const std::string& session_id, const char* state_id) {
    return dir / (session_id + "." + state_id);
}

SessionStates open_durable_states(const std::filesystem::path& dir, const std::string& session_id) {
    std::filesystem::create_directories(dir);
    SessionStates s;
    s.client_info = std::make_shared<StateObject>(
        state_id::kClientInfo, make_durable_backend(durable_file(dir, session_id, state_id::kClientInfo)));
    s.train_session = std::make_shared<StateObject>(
        state_id::kTrainSession,
        make_durable_backend(durable_file(dir, session_id, state_id::kTrainSession)));
    s.client_training = std::make_shared<StateObject>(
        state_id::kClientTraining,
        make_durable_backend(durable_file(dir, session_id, state_id::kClientTraining)));
    s.client_selection = std::make_shared<StateObject>(
        state_id::kClientSelection,
        make_durable_backend(durable_file(dir, session_id, state_id::kClientSelection)));
    s.aggregation = std::make_shared<StateObject>(
        state_id::kAggregation,
        make_durable_backend(durable_file(dir, session_id, state_id::kAggregation)));
    return s;
}

bool durable_states_exist(const std::filesystem::path& dir, const std::string& session_id) {
    return std::filesystem::exists(durable_file(dir, session_id, state_id::kTrainSession));
}

namespace {
constexpr char kCkptMagic[8] = {'S', 'K', 'F', 'C', 'K', 'P', 'T', '1'};
constexpr uint32_t kCkptVersion = 1;
}  // namespace

void write_checkpoint(const SessionStates& states, const std::filesystem::path& destination,
                      const std::string& session_id, int64_t round_number) {
    std::vector<uint8_t> out(kCkptMagic, kCkptMagic + 8);
    put_u32le(out, kCkptVersion);
    put_str(out, session_id);
    put_u64le(out, static_cast<uint64_t>(round_number));
    auto objs = states.all();
    put_u32le(out, static_cast<uint32_t>(objs.size()));
    for (const auto& obj : objs) {
        put_str(out, obj->id());
        std::vector<uint8_t> entries = obj->encode_entries();
        put_u64le(out, entries.size());
        out.insert(out.end(), entries.begin(), entries.end());
    }

    if (destination.has_parent_path()) std::filesystem::create_directories(destination.parent_path());
    std::filesystem::path tmp = destination;
    tmp += ".tmp";
    FILE* f = ::fopen(tmp.c_str(), "wb");
    if (!f) throw IoFailure("cannot create checkpoint " + tmp.string());
    bool ok = ::fwrite(out.data(), 1, out.size(), f) == out.size();
    ok = ::fflush(f) == 0 && ok;
    if (ok) ::fdatasync(::fileno(f));
    ::fclose(f);
    if (!ok) {
        std::filesystem::remove(tmp);
        throw IoFailure("short write on checkpoint " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, destination, ec);
    if (ec) throw IoFailure("checkpoint rename failed: " + ec.message());
}

SessionStates restore_checkpoint(const std::filesystem::path& source, const std::string& session_id,
                                 CheckpointInfo* info) {
    if (!std::filesystem::exists(source)) throw NotFound("no checkpoint at " + source.string());
    std::vector<uint8_t> raw;
    {
        FILE* f = ::fopen(source.c_str(), "rb");
        if (!f) throw NotFound("cannot open checkpoint " + source.string());
        ::fseek(f, 0, SEEK_END);
        long sz = ::ftell(f);
        ::fseek(f, 0, SEEK_SET);
        raw.resize(static_cast<size_t>(sz));
        if (sz > 0 && ::fread(raw.data(), 1, raw.size(), f) != raw.size()) {
            ::fclose(f);
            throw IoFailure("cannot read checkpoint " + source.string());
        }
        ::fclose(f);
    }
    std::span<const uint8_t> b(raw);
    if (b.size() < 12 || std::memcmp(b.data(), kCkptMagic, 8) != 0)
        throw VersionMismatch("not a checkpoint file: " + source.string());
    size_t off = 8;
    uint32_t version = get_u32le(b, off);
    if (version != kCkptVersion)
        throw VersionMismatch("unsupported checkpoint version " + std::to_string(version));
    std::string stored_session = get_str(b, off);
    if (!session_id.empty() && stored_session != session_id)
        throw NotFound("checkpoint holds session '" + stored_session + "', not '" + session_id + "'");
    int64_t round = static_cast<int64_t>(get_u64le(b, off));
    uint32_t count = get_u32le(b, off);

    SessionStates states = make_memory_states();
    std::map<std::string, std::shared_ptr<StateObject>> by_id;
    for (const auto& obj : states.all()) by_id[obj->id()] = obj;
    for (uint32_t i = 0; i < count; ++i) {
        std::string id = get_str(b, off);
        uint64_t len = get_u64le(b, off);
        if (off + len > b.size()) throw MalformedFrame("checkpoint truncated");
        auto it = by_id.find(id);
        if (it == by_id.end()) throw VersionMismatch("unknown state id in checkpoint: " + id);
        it->second->load_entries(b.subspan(off, len));
        off += len;
    }
    if (info) {
        info->round_number = round;
        info->session_id = stored_session;
        info->format_version = version;
    }
    return states;
}

std::optional<std::filesystem::path> find_latest_checkpoint(const std::filesystem::path& dir,
                                                            const std::string& session_id) {
    if (!std::filesystem::exists(dir)) return std::nullopt;
    std::optional<std::filesystem::path> best;
    int64_t best_round = -1;
    std::string prefix = session_id + "_round";
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        std::string name = entry.path().filename().string();
        if (name.rfind(prefix, 0) != 0 || entry.path().extension() != ".ckpt") continue;
        std::string digits = name.substr(prefix.size());
        digits = digits.substr(0, digits.find('.'));
        try {
            int64_t round = std::stoll(digits);
            if (round > best_round) {
                best_round = round;
                best = entry.path();
            }
        } catch (...) {
            continue;
        }
    }
    return best;
}

void merge_state(StateObject& dst, const StateObject& src, bool preserve_liveness) {
    static const std::set<std::string> kLiveness = {"heartbeat_timestamp", "is_active",
                                                    "heartbeat_history"};
    for (const auto& key : src.keys()) {
        if (preserve_liveness && kLiveness.count(key.second) > 0 &&
            dst.get(key.first, "heartbeat_timestamp").has_value()) {
            continue;  // client already live here; keep the fresher view
        }
        auto v = src.get(key.first, key.second);
        if (v) dst.put(key.first, key.second, *v);
    }
}

}  // namespace skiff
