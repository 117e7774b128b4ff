#pragma once

// OODT binary tensors, the CSV fallback, and the DatasetBundle container.
//
// OODT layout (all little-endian):
//   "OODT" | u32 version = 1 | u32 ndim | ndim x u64 dims | prod(dims) x f32
// Payload is row-major. Labels are stored as 1-D f32 tensors of exact integers.

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "oodlens/error.hpp"
#include "oodlens/types.hpp"

namespace oodlens {

inline constexpr std::array<char, 4> kOodtMagic{'O', 'O', 'D', 'T'};
inline constexpr std::uint32_t kOodtVersion = 1;

struct Tensor {
    std::vector<std::uint64_t> dims;
    std::vector<float> data;

    std::size_t ndim() const { return dims.size(); }
    std::size_t rows() const { return dims.empty() ? 0 : static_cast<std::size_t>(dims[0]); }
    std::size_t cols() const { return dims.size() == 2 ? static_cast<std::size_t>(dims[1]) : 1; }

    // Bitwise: distinguishes -0.0 from 0.0.
    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.dims == b.dims && a.data.size() == b.data.size() &&
               (a.data.empty() ||
                std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(float)) == 0);
    }
};

inline std::uint64_t element_count(const std::vector<std::uint64_t>& dims) {
    std::uint64_t n = 1;
    for (auto d : dims) n *= d;
    return n;
}

inline void validate(const Tensor& t) {
    require(t.ndim() == 1 || t.ndim() == 2, ErrorCode::BadFormat,
            "tensor ndim must be 1 or 2, got " + std::to_string(t.ndim()));
    require(element_count(t.dims) == t.data.size(), ErrorCode::BadFormat,
            "product(dims) does not match payload length");
    for (std::size_t i = 0; i < t.data.size(); ++i) {
        if (!std::isfinite(t.data[i]))
            fail(ErrorCode::NonFiniteValue, "non-finite value at element " + std::to_string(i));
    }
}

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline std::uint64_t get_le(const std::string& in, std::size_t offset, int bytes) {
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i)
        v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[offset + i])) << (8 * i);
    return v;
}

// Writes to a sibling temp file and renames over the destination, so a
// reader never observes a partially written file.
inline void write_atomically(const std::filesystem::path& path, const std::string& bytes) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) fail(ErrorCode::IoFailure, "cannot open " + tmp.string() + " for writing");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        out.flush();
        if (!out) fail(ErrorCode::IoFailure, "write failed for " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp, ec);
        fail(ErrorCode::IoFailure, "cannot rename onto " + path.string());
    }
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::IoFailure, "cannot open " + path.string());
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace detail

inline std::string encode_oodt(const Tensor& t) {
    validate(t);
    std::string out;
    out.reserve(12 + 8 * t.ndim() + 4 * t.data.size());
    out.append(kOodtMagic.data(), kOodtMagic.size());
    detail::put_u32(out, kOodtVersion);
    detail::put_u32(out, static_cast<std::uint32_t>(t.ndim()));
    for (auto d : t.dims) detail::put_u64(out, d);
    for (float f : t.data) {
        std::uint32_t bits;
        std::memcpy(&bits, &f, sizeof bits);
        detail::put_u32(out, bits);
    }
    return out;
}

inline Tensor decode_oodt(const std::string& bytes) {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kOodtMagic.data(), 4) != 0)
        fail(ErrorCode::MagicMismatch, "expected \"OODT\" at offset 0");
    if (bytes.size() < 12) fail(ErrorCode::TruncatedPayload, "header truncated at offset " + std::to_string(bytes.size()));
    const auto version = static_cast<std::uint32_t>(detail::get_le(bytes, 4, 4));
    require(version == kOodtVersion, ErrorCode::BadFormat,
            "unsupported version " + std::to_string(version) + " at offset 4");
    const auto ndim = static_cast<std::uint32_t>(detail::get_le(bytes, 8, 4));
    require(ndim == 1 || ndim == 2, ErrorCode::BadFormat,
            "ndim " + std::to_string(ndim) + " at offset 8 is not 1 or 2");
    std::size_t offset = 12;
    if (bytes.size() < offset + 8 * ndim)
        fail(ErrorCode::TruncatedPayload, "dims truncated at offset " + std::to_string(bytes.size()));

    Tensor t;
    for (std::uint32_t i = 0; i < ndim; ++i, offset += 8) t.dims.push_back(detail::get_le(bytes, offset, 8));
    const std::uint64_t n = element_count(t.dims);
    const std::uint64_t available = (bytes.size() - offset) / 4;
    if (available < n)
        fail(ErrorCode::TruncatedPayload, "payload ends at offset " + std::to_string(bytes.size()) +
                                              ", expected " + std::to_string(offset + 4 * n));
    t.data.resize(n);
    for (std::uint64_t i = 0; i < n; ++i, offset += 4) {
        const auto bits = static_cast<std::uint32_t>(detail::get_le(bytes, offset, 4));
        float f;
        std::memcpy(&f, &bits, sizeof f);
        if (!std::isfinite(f))
            fail(ErrorCode::NonFiniteValue, "non-finite value at offset " + std::to_string(offset));
        t.data[i] = f;
    }
    return t;
}

inline Tensor load_tensor(const std::filesystem::path& path) {
    return decode_oodt(detail::read_file(path));
}

inline void save_tensor(const Tensor& t, const std::filesystem::path& path) {
    detail::write_atomically(path, encode_oodt(t));
}

// CSV fallback: header "dim0,dim1,...", one sample per row.
inline std::string encode_csv(const Tensor& t) {
    validate(t);
    std::string out;
    const std::size_t cols = t.cols();
    for (std::size_t j = 0; j < cols; ++j) {
        if (j) out += ',';
        out += "dim" + std::to_string(j);
    }
    out += '\n';
    char buf[32];
    for (std::size_t i = 0; i < t.rows(); ++i) {
        for (std::size_t j = 0; j < cols; ++j) {
            if (j) out += ',';
            std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(t.data[i * cols + j]));
            out += buf;
        }
        out += '\n';
    }
    return out;
}

inline Tensor decode_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) fail(ErrorCode::BadFormat, "missing CSV header");
    const std::size_t cols = static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1;
    Tensor t;
    std::size_t rows = 0;
    while (std::getline(in, line)) {
        if (line.empty() || line == "\r") continue;
        std::size_t fields = 0;
        std::string_view rest(line);
        while (true) {
            const auto comma = rest.find(',');
            auto field = rest.substr(0, comma);
            while (!field.empty() && (field.back() == '\r' || field.back() == ' ')) field.remove_suffix(1);
            while (!field.empty() && field.front() == ' ') field.remove_prefix(1);
            float value = 0.0f;
            auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
            if (ec != std::errc() || ptr != field.data() + field.size())
                fail(ErrorCode::BadFormat, "unparseable CSV value on data row " + std::to_string(rows));
            t.data.push_back(value);
            ++fields;
            if (comma == std::string_view::npos) break;
            rest.remove_prefix(comma + 1);
        }
        require(fields == cols, ErrorCode::BadFormat, "CSV row " + std::to_string(rows) + " has wrong width");
        ++rows;
    }
    t.dims = cols == 1 ? std::vector<std::uint64_t>{rows} : std::vector<std::uint64_t>{rows, cols};
    validate(t);
    return t;
}

// Dispatches on extension: ".csv" uses the CSV fallback, anything else OODT.
inline Tensor load_any(const std::filesystem::path& path) {
    if (path.extension() == ".csv") return decode_csv(detail::read_file(path));
    return load_tensor(path);
}

inline void save_any(const Tensor& t, const std::filesystem::path& path) {
    if (path.extension() == ".csv") {
        detail::write_atomically(path, encode_csv(t));
    } else {
        save_tensor(t, path);
    }
}

inline Matrix to_matrix(const Tensor& t) {
    validate(t);
    Matrix m(static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
    const std::size_t cols = t.cols();
    for (std::size_t i = 0; i < t.rows(); ++i)
        for (std::size_t j = 0; j < cols; ++j) m(i, j) = t.data[i * cols + j];
    return m;
}

inline Tensor from_matrix(const Matrix& m) {
    Tensor t;
    t.dims = {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())};
    t.data.resize(static_cast<std::size_t>(m.size()));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) t.data[i * m.cols() + j] = static_cast<float>(m(i, j));
    return t;
}

inline Tensor from_vector(const std::vector<double>& v) {
    Tensor t;
    t.dims = {v.size()};
    t.data.assign(v.begin(), v.end());
    return t;
}

inline std::vector<double> to_vector(const Tensor& t) {
    validate(t);
    return {t.data.begin(), t.data.end()};
}

inline Tensor labels_to_tensor(const std::vector<int>& labels) {
    Tensor t;
    t.dims = {labels.size()};
    t.data.reserve(labels.size());
    for (int y : labels) t.data.push_back(static_cast<float>(y));
    return t;
}

inline std::vector<int> labels_from_tensor(const Tensor& t) {
    validate(t);
    require(t.ndim() == 1 || t.cols() == 1, ErrorCode::BadFormat, "labels must be a 1-D tensor");
    std::vector<int> labels;
    labels.reserve(t.data.size());
    for (std::size_t i = 0; i < t.data.size(); ++i) {
        const float v = t.data[i];
        if (v < 0.0f || v > 1.0e6f || std::floor(v) != v)
            fail(ErrorCode::BadFormat, "label at element " + std::to_string(i) + " is not a small nonnegative integer");
        labels.push_back(static_cast<int>(v));
    }
    return labels;
}

enum class SplitTag { Train, Heldout, Ood };

constexpr std::string_view to_string(SplitTag tag) {
    switch (tag) {
        case SplitTag::Train: return "train";
        case SplitTag::Heldout: return "heldout";
        case SplitTag::Ood: return "ood";
    }
    return "?";
}

struct DatasetBundle {
    Matrix features;
    std::optional<Matrix> logits;
    std::optional<std::vector<int>> labels;
    SplitTag split = SplitTag::Train;

    Eigen::Index rows() const { return features.rows(); }
    Eigen::Index dim() const { return features.cols(); }

    int num_classes() const {
        if (!labels || labels->empty()) return 0;
        return *std::max_element(labels->begin(), labels->end()) + 1;
    }

    void validate() const {
        require(features.allFinite(), ErrorCode::NonFiniteValue, "features contain non-finite values");
        if (logits) {
            require(logits->rows() == features.rows(), ErrorCode::ShapeMismatch, "logits row count differs from features");
            require(logits->allFinite(), ErrorCode::NonFiniteValue, "logits contain non-finite values");
        }
        if (labels) {
            require(split != SplitTag::Ood, ErrorCode::InvalidArgument, "ood bundles carry no labels");
            require(static_cast<Eigen::Index>(labels->size()) == features.rows(), ErrorCode::ShapeMismatch,
                    "label count differs from features");
            for (int y : *labels) require(y >= 0, ErrorCode::InvalidArgument, "negative label");
        }
    }
};

// Files: <prefix>_features.oodt, <prefix>_logits.oodt, <prefix>_labels.oodt.
inline void save_bundle(const DatasetBundle& b, const std::filesystem::path& dir, const std::string& prefix) {
    b.validate();
    save_tensor(from_matrix(b.features), dir / (prefix + "_features.oodt"));
    if (b.logits) save_tensor(from_matrix(*b.logits), dir / (prefix + "_logits.oodt"));
    if (b.labels) save_tensor(labels_to_tensor(*b.labels), dir / (prefix + "_labels.oodt"));
}

inline DatasetBundle load_bundle(const std::filesystem::path& dir, const std::string& prefix, SplitTag split) {
    DatasetBundle b;
    b.split = split;
    b.features = to_matrix(load_tensor(dir / (prefix + "_features.oodt")));
    if (auto p = dir / (prefix + "_logits.oodt"); std::filesystem::exists(p)) b.logits = to_matrix(load_tensor(p));
    if (auto p = dir / (prefix + "_labels.oodt"); split != SplitTag::Ood && std::filesystem::exists(p))
        b.labels = labels_from_tensor(load_tensor(p));
    b.validate();
    return b;
}

}  // namespace oodlens
