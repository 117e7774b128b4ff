#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <limits>

#include "../support/error_probe.hpp"
#include "../support/oracles.hpp"
#include "oodlens/rng.hpp"
#include "oodlens/tensor_io.hpp"

using namespace oodlens;

namespace {

Tensor matrix_2x3() {
    Tensor t;
    t.dims = {2, 3};
    t.data = {1.5f, -2.25f, 3.0f, 1e-30f, -0.0f, 7.125e20f};
    return t;
}

}  // namespace

TEST(TensorIo, RoundTripIsBitExact) {
    const auto dir = oracle::scratch_dir("tensor_roundtrip");
    const Tensor t = matrix_2x3();
    save_tensor(t, dir / "m.oodt");
    const Tensor back = load_tensor(dir / "m.oodt");
    EXPECT_EQ(back.dims, t.dims);
    EXPECT_TRUE(back == t);
    EXPECT_TRUE(std::signbit(back.data[4]));
}

TEST(TensorIo, OneByOneZero) {
    Tensor t;
    t.dims = {1, 1};
    t.data = {0.0f};
    const Tensor back = decode_oodt(encode_oodt(t));
    EXPECT_EQ(back.dims, (std::vector<std::uint64_t>{1, 1}));
    EXPECT_EQ(back.data, std::vector<float>{0.0f});
}

TEST(TensorIo, HeaderLayoutIsLittleEndian) {
    const std::string bytes = encode_oodt(matrix_2x3());
    ASSERT_EQ(bytes.size(), 4u + 4 + 4 + 2 * 8 + 6 * 4);
    EXPECT_EQ(bytes.substr(0, 4), "OODT");
    const auto u8 = [&](std::size_t i) { return static_cast<unsigned char>(bytes[i]); };
    EXPECT_EQ(u8(4), 1);  // version
    EXPECT_EQ(u8(5) | u8(6) | u8(7), 0);
    EXPECT_EQ(u8(8), 2);  // ndim
    EXPECT_EQ(u8(12), 2);  // dims[0]
    EXPECT_EQ(u8(20), 3);  // dims[1]
    float first;
    std::uint32_t bits = u8(28) | (u8(29) << 8) | (u8(30) << 16) | (static_cast<std::uint32_t>(u8(31)) << 24);
    std::memcpy(&first, &bits, 4);
    EXPECT_EQ(first, 1.5f);
}

TEST(TensorIo, TruncatedPayloadNamesOffset) {
    std::string bytes = encode_oodt(matrix_2x3());
    bytes.resize(bytes.size() - 2);
    try {
        decode_oodt(bytes);
        FAIL() << "expected TruncatedPayload";
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::TruncatedPayload);
        EXPECT_NE(std::string(e.what()).find("offset"), std::string::npos);
    }
}

TEST(TensorIo, MagicMismatch) {
    std::string bytes = encode_oodt(matrix_2x3());
    bytes[0] = 'X';
    EXPECT_EQ(oracle::code_of([&] { decode_oodt(bytes); }), ErrorCode::MagicMismatch);
    EXPECT_EQ(oracle::code_of([&] { decode_oodt(""); }), ErrorCode::MagicMismatch);
}

TEST(TensorIo, NonFinitePayloadRejectedOnLoad) {
    std::string bytes = encode_oodt(matrix_2x3());
    const float nan = std::numeric_limits<float>::quiet_NaN();
    std::memcpy(bytes.data() + 28 + 4, &nan, 4);
    try {
        decode_oodt(bytes);
        FAIL() << "expected NonFiniteValue";
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::NonFiniteValue);
        EXPECT_NE(std::string(e.what()).find("offset 32"), std::string::npos);
    }
}

TEST(TensorIo, NonFiniteRejectedBeforeWrite) {
    const auto dir = oracle::scratch_dir("tensor_nan");
    Tensor t = matrix_2x3();
    t.data[2] = std::numeric_limits<float>::infinity();
    EXPECT_EQ(oracle::code_of([&] { save_tensor(t, dir / "bad.oodt"); }), ErrorCode::NonFiniteValue);
    EXPECT_FALSE(std::filesystem::exists(dir / "bad.oodt"));
    EXPECT_FALSE(std::filesystem::exists(dir / "bad.oodt.tmp"));
}

TEST(TensorIo, UnwritablePathIsIoFailure) {
    EXPECT_EQ(oracle::code_of([&] { save_tensor(matrix_2x3(), "/nonexistent_dir_oodlens/x.oodt"); }), ErrorCode::IoFailure);
    EXPECT_EQ(oracle::code_of([&] { load_tensor("/nonexistent_dir_oodlens/x.oodt"); }), ErrorCode::IoFailure);
}

TEST(TensorIo, ShapeMismatchAndBadNdim) {
    Tensor t;
    t.dims = {2, 2};
    t.data = {1, 2, 3};
    EXPECT_EQ(oracle::code_of([&] { encode_oodt(t); }), ErrorCode::BadFormat);
    t.dims = {1, 1, 3};
    EXPECT_EQ(oracle::code_of([&] { encode_oodt(t); }), ErrorCode::BadFormat);
}

TEST(TensorIo, CsvRoundTripIsBitExact) {
    const Tensor t = matrix_2x3();
    const std::string csv = encode_csv(t);
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "dim0,dim1,dim2");
    EXPECT_TRUE(decode_csv(csv) == t);

    const auto dir = oracle::scratch_dir("tensor_csv");
    save_any(t, dir / "m.csv");
    EXPECT_TRUE(load_any(dir / "m.csv") == t);
    save_any(t, dir / "m.oodt");
    EXPECT_TRUE(load_any(dir / "m.oodt") == t);
}

TEST(TensorIo, CsvRejectsRaggedRows) {
    EXPECT_EQ(oracle::code_of([] { decode_csv("dim0,dim1\n1,2\n3\n"); }), ErrorCode::BadFormat);
    EXPECT_EQ(oracle::code_of([] { decode_csv("dim0\nabc\n"); }), ErrorCode::BadFormat);
}

TEST(TensorIo, RandomRoundTripProperty) {
    Rng rng(7, 0);
    for (int trial = 0; trial < 50; ++trial) {
        Tensor t;
        const auto rows = 1 + rng.below(20), cols = 1 + rng.below(6);
        t.dims = trial % 2 ? std::vector<std::uint64_t>{rows * cols} : std::vector<std::uint64_t>{rows, cols};
        for (std::uint64_t i = 0; i < rows * cols; ++i) t.data.push_back(static_cast<float>(rng.normal() * 1e3));
        EXPECT_TRUE(decode_oodt(encode_oodt(t)) == t);
        // CSV carries no shape: a single column always reads back as 1-D.
        Tensor csv_expected = t;
        if (cols == 1) csv_expected.dims = {rows};
        EXPECT_TRUE(decode_csv(encode_csv(t)) == csv_expected);
    }
}

TEST(TensorIo, MatrixAndLabelConversions) {
    Matrix m(2, 2);
    m << 1, 2, 3, 4;
    EXPECT_EQ(to_matrix(from_matrix(m)), m);
    const std::vector<int> labels{0, 2, 1, 1};
    EXPECT_EQ(labels_from_tensor(labels_to_tensor(labels)), labels);
    Tensor bad;
    bad.dims = {2};
    bad.data = {0.5f, 1.0f};
    EXPECT_EQ(oracle::code_of([&] { labels_from_tensor(bad); }), ErrorCode::BadFormat);
}

TEST(TensorIo, BundleRoundTripAndValidation) {
    const auto dir = oracle::scratch_dir("bundle");
    DatasetBundle b;
    b.features = Matrix::Random(5, 3).cast<float>().cast<double>();
    b.logits = Matrix::Random(5, 2).cast<float>().cast<double>();
    b.labels = std::vector<int>{0, 1, 0, 1, 1};
    save_bundle(b, dir, "train");
    const DatasetBundle back = load_bundle(dir, "train", SplitTag::Train);
    EXPECT_EQ(back.features, b.features);
    EXPECT_EQ(*back.logits, *b.logits);
    EXPECT_EQ(*back.labels, *b.labels);
    EXPECT_EQ(back.num_classes(), 2);

    DatasetBundle ood = b;
    ood.split = SplitTag::Ood;
    EXPECT_EQ(oracle::code_of([&] { ood.validate(); }), ErrorCode::InvalidArgument);
    DatasetBundle ragged = b;
    ragged.logits = Matrix::Zero(4, 2);
    EXPECT_EQ(oracle::code_of([&] { ragged.validate(); }), ErrorCode::ShapeMismatch);
}

TEST(TensorIo, AtomicWriteLeavesNoTemporaryFile) {
    const auto dir = oracle::scratch_dir("atomic");
    save_tensor(matrix_2x3(), dir / "a.oodt");
    save_tensor(matrix_2x3(), dir / "a.oodt");
    std::size_t files = 0;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        ++files;
        EXPECT_EQ(entry.path().filename(), "a.oodt");
    }
    EXPECT_EQ(files, 1u);
}
