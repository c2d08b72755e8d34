#include "skiff/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <random>

#include "skiff/errors.hpp"

namespace skiff {

namespace {

constexpr uint32_t kMatrixMagic = 0x544D4C46u;  // "FLMT"
constexpr uint32_t kLabelMagic = 0x424C4C46u;   // "FLLB"

struct Header {
    uint32_t magic, rows, cols, labels;
};

void write_file(const std::filesystem::path& p, const Header& h, const void* data, size_t bytes) {
    FILE* f = ::fopen(p.c_str(), "wb");
    if (!f) throw IoFailure("cannot create " + p.string());
    bool ok = ::fwrite(&h, sizeof(h), 1, f) == 1;
    if (bytes > 0) ok = ok && ::fwrite(data, 1, bytes, f) == bytes;
    ::fclose(f);
    if (!ok) throw IoFailure("short write on " + p.string());
}

Header read_header(FILE* f, const std::filesystem::path& p) {
    Header h{};
    if (::fread(&h, sizeof(h), 1, f) != 1) throw IoFailure("cannot read header of " + p.string());
    return h;
}

}  // namespace

void Dataset::validate() const {
    if (rows == 0) throw ShapeMismatch("dataset has no rows");
    if (features.size() != rows * cols) throw ShapeMismatch("feature buffer size mismatch");
    if (labels.size() != rows) throw ShapeMismatch("label count mismatch");
    for (int32_t y : labels)
        if (y < 0 || y >= num_labels) throw ShapeMismatch("label out of range");
}

void save_dataset(const Dataset& d, const std::filesystem::path& dir, const std::string& split) {
    std::filesystem::create_directories(dir);
    Header mh{kMatrixMagic, static_cast<uint32_t>(d.rows), static_cast<uint32_t>(d.cols),
              static_cast<uint32_t>(d.num_labels)};
    write_file(dir / (split + ".mat"), mh, d.features.data(), d.features.size() * sizeof(float));
    Header lh{kLabelMagic, static_cast<uint32_t>(d.rows), 1, static_cast<uint32_t>(d.num_labels)};
    write_file(dir / (split + ".lab"), lh, d.labels.data(), d.labels.size() * sizeof(int32_t));
}

Dataset load_dataset(const std::filesystem::path& dir, const std::string& split) {
    std::filesystem::path mp = dir / (split + ".mat");
    std::filesystem::path lp = dir / (split + ".lab");
    if (!std::filesystem::exists(mp) || !std::filesystem::exists(lp))
        throw NotFound("dataset split '" + split + "' not found in " + dir.string());

    Dataset d;
    {
        FILE* f = ::fopen(mp.c_str(), "rb");
        if (!f) throw IoFailure("cannot open " + mp.string());
        Header h = read_header(f, mp);
        if (h.magic != kMatrixMagic) {
            ::fclose(f);
            throw MalformedFrame("bad matrix magic in " + mp.string());
        }
        d.rows = h.rows;
        d.cols = h.cols;
        d.num_labels = static_cast<int32_t>(h.labels);
        d.features.resize(d.rows * d.cols);
        size_t got = ::fread(d.features.data(), sizeof(float), d.features.size(), f);
        ::fclose(f);
        if (got != d.features.size()) throw MalformedFrame("truncated matrix file " + mp.string());
    }
    {
        FILE* f = ::fopen(lp.c_str(), "rb");
        if (!f) throw IoFailure("cannot open " + lp.string());
        Header h = read_header(f, lp);
        if (h.magic != kLabelMagic || h.rows != d.rows) {
            ::fclose(f);
            throw MalformedFrame("label file does not match matrix in " + dir.string());
        }
        d.labels.resize(d.rows);
        size_t got = ::fread(d.labels.data(), sizeof(int32_t), d.labels.size(), f);
        ::fclose(f);
        if (got != d.labels.size()) throw MalformedFrame("truncated label file " + lp.string());
    }
    d.validate();
    return d;
}

bool dataset_exists(const std::filesystem::path& dir, const std::string& split) {
    return std::filesystem::exists(dir / (split + ".mat")) &&
           std::filesystem::exists(dir / (split + ".lab"));
}

Dataset make_blobs(size_t n, size_t dim, int32_t classes, double separation, uint64_t seed) {
    if (n == 0 || dim == 0 || classes <= 0) throw ShapeMismatch("empty blob spec");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);

    // class means: random directions scaled to `separation`
    std::vector<std::vector<double>> means(classes, std::vector<double>(dim));
    for (auto& m : means) {
        double norm = 0;
        for (auto& v : m) {
            v = gauss(rng);
            norm += v * v;
        }
        norm = std::sqrt(std::max(norm, 1e-12));
        for (auto& v : m) v = v / norm * separation;
    }

    Dataset d;
    d.rows = n;
    d.cols = dim;
    d.num_labels = classes;
    d.features.resize(n * dim);
    d.labels.resize(n);
    for (size_t i = 0; i < n; ++i) {
        int32_t y = static_cast<int32_t>(i % classes);
        d.labels[i] = y;
        for (size_t j = 0; j < dim; ++j)
            d.features[i * dim + j] = static_cast<float>(means[y][j] + gauss(rng));
    }
    // shuffle rows so contiguous slices are label-mixed
    std::vector<uint32_t> perm(n);
    for (size_t i = 0; i < n; ++i) perm[i] = static_cast<uint32_t>(i);
    std::shuffle(perm.begin(), perm.end(), rng);
    Dataset out = take_subset(d, perm);
    return out;
}

std::map<std::string, int64_t> label_histogram(const Dataset& d) {
    std::map<std::string, int64_t> h;
    for (int32_t y : d.labels) ++h[std::to_string(y)];
    return h;
}

Dataset take_subset(const Dataset& d, const std::vector<uint32_t>& indices) {
    Dataset out;
    out.rows = indices.size();
    out.cols = d.cols;
    out.num_labels = d.num_labels;
    out.features.resize(out.rows * out.cols);
    out.labels.resize(out.rows);
    for (size_t i = 0; i < indices.size(); ++i) {
        uint32_t src = indices[i];
        if (src >= d.rows) throw ShapeMismatch("subset index out of range");
        std::memcpy(out.features.data() + i * d.cols, d.features.data() + size_t{src} * d.cols,
                    d.cols * sizeof(float));
        out.labels[i] = d.labels[src];
    }
    return out;
}

}  // namespace skiff
