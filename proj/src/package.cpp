#include "skiff/package.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

#include "skiff/codec.hpp"
#include "skiff/errors.hpp"

namespace skiff {

using nlohmann::json;

std::string ModelPackage::sha256() const {
    // canonical concatenation: sorted by name (map order), each entry as
    // u64le(name len) name u64le(data len) data
    std::vector<uint8_t> buf;
    auto put_u64 = [&](uint64_t v) {
        for (int i = 0; i < 8; ++i) buf.push_back(static_cast<uint8_t>(v >> (8 * i)));
    };
    for (const auto& [name, data] : files) {
        put_u64(name.size());
        buf.insert(buf.end(), name.begin(), name.end());
        put_u64(data.size());
        buf.insert(buf.end(), data.begin(), data.end());
    }
    return sha256_hex(buf);
}

json ModelPackage::to_json() const {
    json j;
    j["package_name"] = package_name;
    json f = json::object();
    for (const auto& [name, data] : files) f[name] = base64_encode(data);
    j["files"] = f;
    return j;
}

ModelPackage ModelPackage::from_json(const json& j) {
    ModelPackage pkg;
    pkg.package_name = j.value("package_name", "");
    if (j.contains("files"))
        for (auto it = j["files"].begin(); it != j["files"].end(); ++it)
            pkg.files[it.key()] = base64_decode(it.value().get<std::string>());
    return pkg;
}

PackageManifest PackageManifest::parse(const ModelPackage& pkg) {
    auto it = pkg.files.find("manifest.json");
    if (it == pkg.files.end()) throw MalformedFrame("package has no manifest.json");
    try {
        json j = json::parse(it->second.begin(), it->second.end());
        PackageManifest m;
        m.model_id = j.value("model_id", "");
        m.family = j.at("family").get<std::string>();
        m.dataset = j.at("dataset").get<std::string>();
        m.input_dim = j.at("input_dim").get<size_t>();
        m.num_classes = j.at("num_classes").get<int32_t>();
        m.hidden = j.value("hidden", size_t{0});
        return m;
    } catch (const json::exception& e) {
        throw MalformedFrame(std::string("bad package manifest: ") + e.what());
    }
}

ModelPackage build_builtin_package(const std::string& model_id, const std::string& family,
                                   const std::string& dataset, size_t input_dim, int32_t num_classes,
                                   size_t hidden) {
    json manifest;
    manifest["model_id"] = model_id;
    manifest["family"] = family;
    manifest["dataset"] = dataset;
    manifest["input_dim"] = input_dim;
    manifest["num_classes"] = num_classes;
    if (hidden > 0) manifest["hidden"] = hidden;
    std::string text = manifest.dump(2);
    ModelPackage pkg;
    pkg.package_name = model_id;
    pkg.files["manifest.json"] = std::vector<uint8_t>(text.begin(), text.end());
    return pkg;
}

ModelPackage load_package_dir(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) throw NotFound("no package directory " + dir.string());
    ModelPackage pkg;
    pkg.package_name = dir.filename().string();
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        std::ifstream in(entry.path(), std::ios::binary);
        std::vector<uint8_t> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        pkg.files[entry.path().filename().string()] = std::move(data);
    }
    if (pkg.files.empty()) throw NotFound("package directory is empty: " + dir.string());
    return pkg;
}

std::optional<ModelPackage> PackageCache::lookup(const std::string& sha256_hex) const {
    std::filesystem::path pdir = dir_ / sha256_hex;
    if (!std::filesystem::is_directory(pdir)) return std::nullopt;
    ModelPackage pkg;
    std::ifstream namein(pdir / ".name");
    if (namein) std::getline(namein, pkg.package_name);
    for (const auto& entry : std::filesystem::directory_iterator(pdir)) {
        if (!entry.is_regular_file() || entry.path().filename() == ".name") continue;
        std::ifstream in(entry.path(), std::ios::binary);
        std::vector<uint8_t> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        pkg.files[entry.path().filename().string()] = std::move(data);
    }
    if (pkg.sha256() != sha256_hex) return std::nullopt;  // damaged cache entry
    return pkg;
}

void PackageCache::store(const ModelPackage& pkg) {
    std::string sha = pkg.sha256();
    std::filesystem::path pdir = dir_ / sha;
    std::filesystem::create_directories(pdir);
    for (const auto& [name, data] : pkg.files) {
        std::ofstream out(pdir / name, std::ios::binary | std::ios::trunc);
        out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
        if (!out) throw IoFailure("cannot write package file " + (pdir / name).string());
    }
    std::ofstream nameout(pdir / ".name", std::ios::trunc);
    nameout << pkg.package_name;
}

void PackageCache::wipe() {
    std::error_code ec;
    std::filesystem::remove_all(dir_, ec);
}

}  // namespace skiff
