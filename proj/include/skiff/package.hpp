#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "skiff/engine.hpp"

namespace skiff {

/// Files delivered to a client so it can run local training: at desk scale a
/// manifest naming a built-in trainer/model plus hyperparameter defaults,
/// but any file set travels the same way. Identified by a SHA-256 digest
/// over the canonical concatenation of (name, bytes) pairs sorted by name.
struct ModelPackage {
    std::string package_name;
    std::map<std::string, std::vector<uint8_t>> files;

    std::string sha256() const;

    nlohmann::json to_json() const;  // files as base64
    static ModelPackage from_json(const nlohmann::json& j);
};

/// manifest.json inside a built-in package.
struct PackageManifest {
    std::string model_id;      // user-facing name
    std::string family;        // logreg | mlp
    std::string dataset;       // dataset the clients should train on
    size_t input_dim = 0;
    int32_t num_classes = 0;
    size_t hidden = 0;
    ModelSpec spec() const { return ModelSpec{family, input_dim, num_classes, hidden}; }

    static PackageManifest parse(const ModelPackage& pkg);  // throws MalformedFrame
};

ModelPackage build_builtin_package(const std::string& model_id, const std::string& family,
                                   const std::string& dataset, size_t input_dim, int32_t num_classes,
                                   size_t hidden);

/// Loads a package from a directory of files (model_dir in the session
/// config). Every regular file becomes a package entry.
ModelPackage load_package_dir(const std::filesystem::path& dir);

/// Client-side content-addressed package store: <cache_dir>/<sha256>/<files>.
class PackageCache {
public:
    explicit PackageCache(std::filesystem::path dir) : dir_(std::move(dir)) {}

    std::optional<ModelPackage> lookup(const std::string& sha256_hex) const;
    void store(const ModelPackage& pkg);  // verifies digest on write
    void wipe();
    const std::filesystem::path& dir() const { return dir_; }

private:
    std::filesystem::path dir_;
};

}  // namespace skiff
