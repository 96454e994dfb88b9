#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "pcnet/data_io.hpp"

using namespace pcnet;
using Bytes = std::vector<std::uint8_t>;

namespace {

void put_be32(Bytes& b, std::uint32_t v) {
    for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<std::uint8_t>(v >> s));
}
void put_le(Bytes& b, std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

Bytes idx_images(std::uint32_t n, std::uint32_t h, std::uint32_t w, std::size_t payload) {
    Bytes b{0, 0, 0x08, 0x03};
    put_be32(b, n);
    put_be32(b, h);
    put_be32(b, w);
    for (std::size_t i = 0; i < payload; ++i) b.push_back(static_cast<std::uint8_t>(i * 37 % 256));
    return b;
}

// Hand encoding of the weights container, written from the format description.
Bytes encode_pcnw(const WeightMap& m) {
    Bytes b{'P', 'C', 'N', 'W'};
    put_le(b, 1, 4);
    put_le(b, m.size(), 4);
    for (const auto& [name, t] : m) {
        put_le(b, name.size(), 2);
        b.insert(b.end(), name.begin(), name.end());
        b.push_back(0);
        b.push_back(static_cast<std::uint8_t>(t.rank()));
        for (std::size_t d : t.shape()) put_le(b, d, 4);
        for (float f : t.values()) {
            std::uint32_t u;
            std::memcpy(&u, &f, 4);
            put_le(b, u, 4);
        }
    }
    return b;
}

WeightMap random_map(Rng& rng) {
    WeightMap m;
    const std::size_t count = rng.below(6);
    for (std::size_t i = 0; i < count; ++i) {
        Shape s(1 + rng.below(4));
        for (auto& d : s) d = 1 + rng.below(5);
        Tensor t(s);
        // raw bit patterns, including NaN payloads and denormals
        for (float& x : t.values()) {
            const auto u = static_cast<std::uint32_t>(rng.next_u64());
            std::memcpy(&x, &u, 4);
        }
        std::string name = "t" + std::to_string(rng.below(1000)) + ".w";
        if (rng.below(4) == 0) name += "\xc3\xa9";  // non-ASCII UTF-8
        m[name] = std::move(t);
    }
    return m;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
    return a.shape() == b.shape() && std::memcmp(a.data(), b.data(), a.numel() * 4) == 0;
}

}  // namespace

// ---------------------------------------------------------------- IDX

TEST(Idx, ParsesImageExample) {
    const Bytes b = idx_images(2, 4, 4, 32);
    const Tensor t = read_idx(b);
    EXPECT_EQ(t.shape(), (Shape{2, 1, 4, 4}));
    for (std::size_t i = 0; i < 32; ++i) EXPECT_FLOAT_EQ(t[i], static_cast<float>(b[16 + i]) / 255.0f);
}

TEST(Idx, ByteScaling) {
    Bytes b = idx_images(1, 1, 2, 0);
    b.push_back(255);
    b.push_back(0);
    const Tensor t = read_idx(b);
    EXPECT_EQ(t[0], 1.0f);
    EXPECT_EQ(t[1], 0.0f);
}

TEST(Idx, TruncatedPayloadReportsOffset47) {
    try {
        read_idx(idx_images(2, 4, 4, 31));
        FAIL() << "expected FormatError";
    } catch (const FormatError& e) {
        EXPECT_EQ(e.offset(), 47u);
        EXPECT_NE(std::string(e.what()).find("47"), std::string::npos);
    }
}

TEST(Idx, RejectsBadMagicAtItsOffset) {
    Bytes b = idx_images(1, 2, 2, 4);
    b[2] = 0x0D;  // float type code
    try {
        read_idx(b);
        FAIL();
    } catch (const FormatError& e) {
        EXPECT_EQ(e.offset(), 2u);
    }
    b = idx_images(1, 2, 2, 4);
    b[0] = 1;
    try {
        read_idx(b);
        FAIL();
    } catch (const FormatError& e) {
        EXPECT_EQ(e.offset(), 0u);
    }
}

TEST(Idx, RejectsTruncatedHeaderAndTrailingBytes) {
    Bytes b = idx_images(1, 2, 2, 4);
    EXPECT_THROW(read_idx(Bytes(b.begin(), b.begin() + 10)), FormatError);
    b.push_back(0);
    EXPECT_THROW(read_idx(b), FormatError);
}

TEST(Idx, CanonicalMnistHeader) {
    const Bytes header = idx_images(60000, 28, 28, 0);
    const IdxHeader h = read_idx_header(header);
    EXPECT_EQ(h.dims, (std::vector<std::uint32_t>{60000, 28, 28}));
    EXPECT_EQ(h.payload_offset, 16u);
    const char* env = std::getenv("MNIST_TRAIN_IMAGES");
    const std::filesystem::path p = env ? env : "train-images-idx3-ubyte";
    if (std::filesystem::exists(p)) {
        const Bytes f = read_file(p);
        EXPECT_EQ(read_idx_header(f).dims, (std::vector<std::uint32_t>{60000, 28, 28}));
    }
}

TEST(Idx, LabelsRoundTrip) {
    const std::vector<std::size_t> labels{0, 4, 2, 3, 1, 255};
    const Bytes b = write_idx_labels(labels);
    EXPECT_EQ((Bytes{b.begin(), b.begin() + 4}), (Bytes{0, 0, 8, 1}));
    EXPECT_EQ(read_idx_labels(b), labels);
}

TEST(Idx, ImagesRoundTripThroughBytes) {
    const Tensor t = read_idx(idx_images(3, 5, 4, 60));
    EXPECT_EQ(read_idx(write_idx_images(t)), t);
}

TEST(Idx, LoadsDatasetFromFiles) {
    const auto dir = std::filesystem::temp_directory_path() / "pcnet_idx_test";
    std::filesystem::create_directories(dir);
    const Dataset d = synth_dataset(4, 10, 8);
    write_file_atomic(dir / "img", write_idx_images(d.images));
    write_file_atomic(dir / "lab", write_idx_labels(d.labels));
    const Dataset r = load_idx_dataset(dir / "img", dir / "lab");
    EXPECT_EQ(r.labels, d.labels);
    EXPECT_EQ(r.class_count, 5u);
    EXPECT_EQ(r.images.shape(), d.images.shape());
    for (std::size_t i = 0; i < r.images.numel(); ++i) EXPECT_NEAR(r.images[i], d.images[i], 0.5 / 255 + 1e-7);
    // count mismatch
    write_file_atomic(dir / "lab2", write_idx_labels(std::vector<std::size_t>{0, 1}));
    EXPECT_ANY_THROW(load_idx_dataset(dir / "img", dir / "lab2"));
    std::filesystem::remove_all(dir);
}

// ---------------------------------------------------------------- synthetic data

TEST(Synth, BalancedClasses) {
    const Dataset d = synth_dataset(1, 10);
    EXPECT_EQ(d.images.shape(), (Shape{10, 1, 16, 16}));
    std::vector<int> counts(kSynthClasses);
    for (auto l : d.labels) ++counts.at(l);
    for (int c : counts) EXPECT_EQ(c, 2);
}

TEST(Synth, DeterministicPerSeed) {
    EXPECT_EQ(synth_dataset(1, 25).images, synth_dataset(1, 25).images);
    EXPECT_NE(synth_dataset(1, 25).images, synth_dataset(2, 25).images);
    // a prefix does not depend on n
    const Dataset a = synth_dataset(9, 5), b = synth_dataset(9, 50);
    EXPECT_EQ(a.images, b.head(5).images);
}

TEST(Synth, ValuesInUnitRange) {
    const Dataset d = synth_dataset(3, 100);
    for (float x : d.images.values()) {
        EXPECT_GE(x, 0.0f);
        EXPECT_LE(x, 1.0f);
    }
}

TEST(Synth, ClassMeansSeparate) {
    const Dataset d = synth_dataset(5, 1000);
    const std::size_t px = 16 * 16;
    std::vector<std::vector<double>> mean(kSynthClasses, std::vector<double>(px));
    std::vector<int> count(kSynthClasses);
    for (std::size_t i = 0; i < d.size(); ++i) {
        ++count[d.labels[i]];
        for (std::size_t k = 0; k < px; ++k) mean[d.labels[i]][k] += d.images[i * px + k];
    }
    for (std::size_t c = 0; c < kSynthClasses; ++c)
        for (auto& v : mean[c]) v /= count[c];
    for (std::size_t a = 0; a < kSynthClasses; ++a)
        for (std::size_t b = a + 1; b < kSynthClasses; ++b) {
            double s = 0;
            for (std::size_t k = 0; k < px; ++k) s += (mean[a][k] - mean[b][k]) * (mean[a][k] - mean[b][k]);
            EXPECT_GT(std::sqrt(s), 0.5) << a << " vs " << b;
        }
}

TEST(DatasetOps, SubsetAndHead) {
    const Dataset d = synth_dataset(2, 10);
    const std::vector<std::size_t> idx{7, 2};
    const Dataset s = d.subset(idx);
    EXPECT_EQ(s.labels, (std::vector<std::size_t>{d.labels[7], d.labels[2]}));
    EXPECT_EQ(s.image(0), d.image(7));
    EXPECT_EQ(d.head(100).size(), 10u);
    const std::vector<std::size_t> bad{10};
    EXPECT_THROW(d.subset(bad), std::out_of_range);
}

// ---------------------------------------------------------------- weights

TEST(Pcnw, EmptyMapIsValidWithCountZero) {
    const Bytes b = save_weights({});
    EXPECT_EQ(b, (Bytes{'P', 'C', 'N', 'W', 1, 0, 0, 0, 0, 0, 0, 0}));
    EXPECT_TRUE(load_weights(b).empty());
}

TEST(Pcnw, MatchesHandEncoding) {
    WeightMap m;
    m["a"] = Tensor({2, 3}, {1, 2, 3, 4, 5, -6.5f});
    m["backbone.0.bias"] = Tensor({1}, {0.25f});
    EXPECT_EQ(save_weights(m), encode_pcnw(m));
}

TEST(Pcnw, RandomizedRoundTripIsBitwise) {
    Rng rng(123);
    for (int trial = 0; trial < 150; ++trial) {
        const WeightMap m = random_map(rng);
        const Bytes b = save_weights(m);
        const WeightMap r = load_weights(b);
        ASSERT_EQ(r.size(), m.size());
        for (const auto& [name, t] : m) ASSERT_TRUE(bitwise_equal(r.at(name), t)) << name;
        ASSERT_EQ(save_weights(r), b);
    }
}

TEST(Pcnw, CorruptedLengthFieldNamesTheTensor) {
    WeightMap m;
    m["alpha"] = Tensor({2, 2}, 1.0f);
    Bytes b = save_weights(m);
    // dims start after magic, version, count, name length, name, dtype, ndim
    const std::size_t dims = 4 + 4 + 4 + 2 + 5 + 1 + 1;
    b[dims] = 0xFF;
    try {
        load_weights(b);
        FAIL();
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("alpha"), std::string::npos) << e.what();
    }
}

TEST(Pcnw, RejectsBadMagicVersionDuplicatesAndTruncation) {
    WeightMap m;
    m["x"] = Tensor({3}, 2.0f);
    const Bytes good = save_weights(m);
    Bytes b = good;
    b[0] = 'Q';
    EXPECT_THROW(load_weights(b), FormatError);
    b = good;
    b[4] = 2;
    EXPECT_THROW(load_weights(b), FormatError);
    b = good;
    b.pop_back();
    EXPECT_THROW(load_weights(b), FormatError);
    b = good;
    b.push_back(0);
    EXPECT_THROW(load_weights(b), FormatError);
    // two entries with the same name
    Bytes dup{'P', 'C', 'N', 'W', 1, 0, 0, 0, 2, 0, 0, 0};
    for (int i = 0; i < 2; ++i) {
        const Bytes one(good.begin() + 12, good.end());
        dup.insert(dup.end(), one.begin(), one.end());
    }
    try {
        load_weights(dup);
        FAIL();
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("x"), std::string::npos);
    }
}

TEST(Files, AtomicWriteReplacesContent) {
    const auto p = std::filesystem::temp_directory_path() / "pcnet_atomic_test.bin";
    write_file_atomic(p, Bytes{1, 2, 3});
    write_file_atomic(p, Bytes{4, 5});
    EXPECT_EQ(read_file(p), (Bytes{4, 5}));
    EXPECT_FALSE(std::filesystem::exists(p.string() + ".tmp"));
    std::filesystem::remove(p);
    EXPECT_ANY_THROW(read_file(p));
}
