#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "skiff/value.hpp"

namespace skiff {

/// (primary, secondary) key. Secondary is empty when the entry has no
/// secondary key.
using StateKey = std::pair<std::string, std::string>;

class StateBackend {
public:
    virtual ~StateBackend() = default;
    virtual void put(const std::string& primary, const std::string& secondary, const Value& v) = 0;
    virtual std::optional<Value> get(const std::string& primary,
                                     const std::string& secondary) const = 0;
    virtual void erase(const std::string& primary, const std::string& secondary) = 0;
    virtual void erase_primary(const std::string& primary) = 0;
    virtual void clear() = 0;
    virtual std::vector<StateKey> keys() const = 0;
};

std::unique_ptr<StateBackend> make_memory_backend();

/// Write-through file store: every put/erase is appended to the state file
/// and flushed before returning, so the on-disk view always matches the live
/// one. The file is an append log headed by a snapshot; it is compacted when
/// the dead-record ratio grows. Throws BackendUnavailable when the file
/// cannot be opened or written.
std::unique_ptr<StateBackend> make_durable_backend(const std::filesystem::path& file);

/// One of the five session-state objects: a keyed map of Values behind a
/// mutex. Every mutation is atomic with respect to concurrent reads. Access
/// goes through StateHandle wrappers; the read-only wrapper rejects all
/// mutations at runtime.
class StateObject {
public:
    StateObject(std::string id, std::unique_ptr<StateBackend> backend);

    const std::string& id() const { return id_; }

    void put(const std::string& primary, const std::string& secondary, const Value& v);
    std::optional<Value> get(const std::string& primary, const std::string& secondary) const;
    void erase(const std::string& primary, const std::string& secondary);
    void erase_primary(const std::string& primary);
    void clear();
    std::vector<StateKey> keys() const;

    /// Hash over the canonical serialized content; used to detect mutations.
    uint64_t content_hash() const;

    /// Canonical encoding of all entries (sorted), for checkpoints.
    std::vector<uint8_t> encode_entries() const;
    void load_entries(std::span<const uint8_t> bytes);  // replaces current content

    /// Swap in a new backend, carrying all current entries over. Used to
    /// direct an in-memory object at the durable store when a session starts.
    void rebind(std::unique_ptr<StateBackend> backend);

private:
    std::string id_;
    mutable std::mutex mu_;
    std::unique_ptr<StateBackend> backend_;
};

/// Read-only or read-write view of a StateObject. put/erase/clear on a
/// read-only handle throw WriteOnReadOnly.
class StateHandle {
public:
    StateHandle() = default;

    static StateHandle rw(std::shared_ptr<StateObject> obj) { return StateHandle(std::move(obj), true); }
    static StateHandle ro(std::shared_ptr<StateObject> obj) { return StateHandle(std::move(obj), false); }

    bool valid() const { return obj_ != nullptr; }
    bool writable() const { return writable_; }
    const std::string& id() const { return obj_->id(); }

    std::optional<Value> get(const std::string& primary, const std::string& secondary = "") const {
        return obj_->get(primary, secondary);
    }
    std::vector<StateKey> keys() const { return obj_->keys(); }
    bool empty() const { return obj_->keys().empty(); }
    uint64_t content_hash() const { return obj_->content_hash(); }

    void put(const std::string& primary, const Value& v) { put(primary, "", v); }
    void put(const std::string& primary, const std::string& secondary, const Value& v);
    void erase(const std::string& primary, const std::string& secondary = "");
    void erase_primary(const std::string& primary);
    void clear();

    StateHandle readonly() const { return StateHandle(obj_, false); }
    std::shared_ptr<StateObject> object() const { return obj_; }

private:
    StateHandle(std::shared_ptr<StateObject> obj, bool writable)
        : obj_(std::move(obj)), writable_(writable) {}

    std::shared_ptr<StateObject> obj_;
    bool writable_ = false;
};

/// Well-known ids of the five state objects.
namespace state_id {
inline constexpr const char* kClientInfo = "client_info";
inline constexpr const char* kTrainSession = "train_session";
inline constexpr const char* kClientTraining = "client_training";
inline constexpr const char* kClientSelection = "client_selection";
inline constexpr const char* kAggregation = "aggregation";
}  // namespace state_id

struct SessionStates {
    std::shared_ptr<StateObject> client_info;
    std::shared_ptr<StateObject> train_session;
    std::shared_ptr<StateObject> client_training;
    std::shared_ptr<StateObject> client_selection;
    std::shared_ptr<StateObject> aggregation;

    std::vector<std::shared_ptr<StateObject>> all() const {
        return {client_info, train_session, client_training, client_selection, aggregation};
    }
};

/// Fresh in-memory states.
SessionStates make_memory_states();

/// States write-through to `dir/<session_id>.<state_id>`. Existing files are
/// reopened with their content intact.
SessionStates open_durable_states(const std::filesystem::path& dir, const std::string& session_id);

/// True if any durable state file exists for the session.
bool durable_states_exist(const std::filesystem::path& dir, const std::string& session_id);

// Checkpoint container: a versioned binary file holding all five states
// (including the global model and any stashed local models) plus the round
// number at save time. Written atomically via temp file + rename.
struct CheckpointInfo {
    int64_t round_number = 0;
    std::string session_id;
    uint32_t format_version = 0;
};

void write_checkpoint(const SessionStates& states, const std::filesystem::path& destination,
                      const std::string& session_id, int64_t round_number);

/// Loads a checkpoint into fresh in-memory states. Throws NotFound when the
/// file does not exist (or does not contain the session) and VersionMismatch
/// on an unknown format version.
SessionStates restore_checkpoint(const std::filesystem::path& source, const std::string& session_id,
                                 CheckpointInfo* info = nullptr);

/// Latest checkpoint file for a session in a directory, by round number.
std::optional<std::filesystem::path> find_latest_checkpoint(const std::filesystem::path& dir,
                                                            const std::string& session_id);

/// Copy entries from src into dst (dst keys are overwritten). When
/// `preserve_liveness` is set, heartbeat/liveness fields of clients already
/// present in dst are kept as-is so a restored snapshot cannot mask fresher
/// discovery data.
void merge_state(StateObject& dst, const StateObject& src, bool preserve_liveness = false);

}  // namespace skiff
