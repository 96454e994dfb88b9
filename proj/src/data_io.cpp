#include "pcnet/data_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include <fmt/format.h>

#include "pcnet/hyperparams.hpp"
#include "pcnet/rng.hpp"

namespace pcnet {

// ---------------------------------------------------------------- Dataset

Tensor Dataset::image(std::size_t i) const {
    const Shape s = image_shape();
    const std::size_t n = shape_numel(s);
    if (i >= size()) throw std::out_of_range("dataset index out of range");
    std::vector<float> v(images.data() + i * n, images.data() + (i + 1) * n);
    return Tensor(s, std::move(v));
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
    if (indices.empty()) throw std::invalid_argument("empty dataset subset");
    const Shape s = image_shape();
    const std::size_t n = shape_numel(s);
    std::vector<float> v;
    v.reserve(indices.size() * n);
    Dataset out;
    out.class_count = class_count;
    for (std::size_t i : indices) {
        if (i >= size()) throw std::out_of_range("dataset index out of range");
        v.insert(v.end(), images.data() + i * n, images.data() + (i + 1) * n);
        out.labels.push_back(labels[i]);
    }
    out.images = Tensor(with_batch(s, indices.size()), std::move(v));
    return out;
}

Dataset Dataset::head(std::size_t n) const {
    std::vector<std::size_t> idx(std::min(n, size()));
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    return subset(idx);
}

void Dataset::validate() const {
    if (images.rank() != 4 || images.dim(0) != labels.size())
        throw ValidationError("dataset images " + shape_str(images.shape()) + " do not match " +
                              std::to_string(labels.size()) + " labels");
    for (std::size_t l : labels)
        if (l >= class_count)
            throw ValidationError(fmt::format("label {} outside class count {}", l, class_count));
}

// ---------------------------------------------------------------- IDX

namespace {

std::uint32_t read_be32(std::span<const std::uint8_t> b, std::size_t off) {
    return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
           std::uint32_t{b[off + 3]};
}

void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>(v >> s));
}

std::size_t idx_payload(const IdxHeader& h, std::span<const std::uint8_t> bytes) {
    std::size_t n = 1;
    for (auto d : h.dims) n *= d;
    if (bytes.size() < h.payload_offset + n)
        throw FormatError(fmt::format("truncated IDX payload: expected {} bytes, found {}", n,
                                      bytes.size() - h.payload_offset),
                          bytes.size());
    if (bytes.size() > h.payload_offset + n)
        throw FormatError(fmt::format("{} trailing bytes after IDX payload", bytes.size() - h.payload_offset - n),
                          h.payload_offset + n);
    return n;
}

}  // namespace

IdxHeader read_idx_header(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 4) throw FormatError("truncated IDX magic number", bytes.size());
    if (bytes[0] != 0 || bytes[1] != 0) throw FormatError("bad IDX magic: leading bytes must be zero", 0);
    if (bytes[2] != 0x08) throw FormatError(fmt::format("unsupported IDX element type 0x{:02x}", bytes[2]), 2);
    if (bytes[3] != 1 && bytes[3] != 3)
        throw FormatError(fmt::format("unsupported IDX dimension count {}", bytes[3]), 3);
    IdxHeader h;
    h.type_code = bytes[2];
    const std::size_t ndim = bytes[3];
    for (std::size_t i = 0; i < ndim; ++i) {
        const std::size_t off = 4 + 4 * i;
        if (bytes.size() < off + 4) throw FormatError("truncated IDX header", bytes.size());
        const std::uint32_t d = read_be32(bytes, off);
        if (d == 0) throw FormatError("IDX dimension must be positive", off);
        h.dims.push_back(d);
    }
    h.payload_offset = 4 + 4 * ndim;
    return h;
}

Tensor read_idx(std::span<const std::uint8_t> bytes) {
    const IdxHeader h = read_idx_header(bytes);
    const std::size_t n = idx_payload(h, bytes);
    std::vector<float> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = static_cast<float>(bytes[h.payload_offset + i]) / 255.0f;
    if (h.dims.size() == 3) return Tensor({h.dims[0], 1, h.dims[1], h.dims[2]}, std::move(v));
    return Tensor({h.dims[0]}, std::move(v));
}

std::vector<std::size_t> read_idx_labels(std::span<const std::uint8_t> bytes) {
    const IdxHeader h = read_idx_header(bytes);
    if (h.dims.size() != 1) throw FormatError("label file must be 1-D (magic 0x00000801)", 3);
    const std::size_t n = idx_payload(h, bytes);
    std::vector<std::size_t> labels(n);
    for (std::size_t i = 0; i < n; ++i) labels[i] = bytes[h.payload_offset + i];
    return labels;
}

std::vector<std::uint8_t> write_idx_images(const Tensor& images) {
    if (images.rank() != 4 || images.dim(1) != 1) throw ShapeError("IDX images must be (N, 1, H, W)");
    std::vector<std::uint8_t> out{0, 0, 0x08, 3};
    put_be32(out, static_cast<std::uint32_t>(images.dim(0)));
    put_be32(out, static_cast<std::uint32_t>(images.dim(2)));
    put_be32(out, static_cast<std::uint32_t>(images.dim(3)));
    for (float v : images.values())
        out.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)));
    return out;
}

std::vector<std::uint8_t> write_idx_labels(std::span<const std::size_t> labels) {
    std::vector<std::uint8_t> out{0, 0, 0x08, 1};
    put_be32(out, static_cast<std::uint32_t>(labels.size()));
    for (auto l : labels) {
        if (l > 255) throw ValidationError("IDX labels must fit in a byte");
        out.push_back(static_cast<std::uint8_t>(l));
    }
    return out;
}

Dataset load_idx_dataset(const std::filesystem::path& images, const std::filesystem::path& labels,
                         std::size_t class_count) {
    Dataset ds;
    ds.images = read_idx(read_file(images));
    if (ds.images.rank() != 4) throw FormatError("image file must be 3-D (magic 0x00000803)", 3);
    ds.labels = read_idx_labels(read_file(labels));
    if (ds.labels.size() != ds.images.dim(0))
        throw ValidationError(fmt::format("{} images but {} labels", ds.images.dim(0), ds.labels.size()));
    std::size_t max_label = 0;
    for (auto l : ds.labels) max_label = std::max(max_label, l);
    ds.class_count = class_count ? class_count : max_label + 1;
    ds.validate();
    return ds;
}

// ---------------------------------------------------------------- synthetic set

namespace {

bool shape_covers(std::size_t cls, double x, double y, double cx, double cy, double r) {
    const double dx = x - cx, dy = y - cy;
    switch (cls) {
        case 0: return dx * dx + dy * dy <= r * r;
        case 1: return std::fabs(dx) <= 0.85 * r && std::fabs(dy) <= 0.85 * r;
        case 2: {  // apex up, base at cy + r
            if (dy < -r || dy > r) return false;
            return std::fabs(dx) <= 0.5 * (dy + r) + 0.25;
        }
        case 3: {
            const double t = std::max(0.9, 0.3 * r);
            return (std::fabs(dx) <= t && std::fabs(dy) <= r) || (std::fabs(dy) <= t && std::fabs(dx) <= r);
        }
        default: {  // three or four horizontal bars
            if (std::fabs(dx) > 1.1 * r || std::fabs(dy) > 1.1 * r) return false;
            const double period = std::max(3.0, 0.75 * r);
            const double phase = std::fmod(dy + 1.1 * r, period);
            return phase < 0.5 * period;
        }
    }
}

}  // namespace

Dataset synth_dataset(std::uint64_t seed, std::size_t n, std::size_t image_size) {
    if (n == 0) throw ValidationError("synth_dataset needs n >= 1");
    if (image_size < 8) throw ValidationError("synth_dataset needs image_size >= 8");
    Dataset ds;
    ds.class_count = kSynthClasses;
    ds.images = Tensor({n, 1, image_size, image_size});
    ds.labels.resize(n);
    const double s = static_cast<double>(image_size);
    const double unit = s / 16.0;
    for (std::size_t i = 0; i < n; ++i) {
        Rng rng = Rng::stream(seed, i);
        const std::size_t cls = i % kSynthClasses;
        ds.labels[i] = cls;
        const double cx = s / 2 + rng.uniform(-2.0, 2.0) * unit;
        const double cy = s / 2 + rng.uniform(-2.0, 2.0) * unit;
        const double r = rng.uniform(3.5, 5.5) * unit;
        const double fg = rng.uniform(0.7, 1.0);
        float* px = ds.images.data() + i * image_size * image_size;
        for (std::size_t y = 0; y < image_size; ++y)
            for (std::size_t x = 0; x < image_size; ++x) {
                double v = shape_covers(cls, x + 0.5, y + 0.5, cx, cy, r) ? fg : 0.0;
                v += 0.05 * rng.normal();
                px[y * image_size + x] = static_cast<float>(std::clamp(v, 0.0, 1.0));
            }
    }
    return ds;
}

// ---------------------------------------------------------------- PCNW weights

namespace {

constexpr char kMagic[4] = {'P', 'C', 'N', 'W'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T v) {
    using U = std::make_unsigned_t<T>;
    U u = static_cast<U>(v);
    for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(u >> (8 * i)));
}

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> b) : bytes_(b) {}
    std::size_t pos() const { return pos_; }
    std::size_t remaining() const { return bytes_.size() - pos_; }

    template <typename T>
    T get(const std::string& what) {
        if (remaining() < sizeof(T)) throw FormatError("truncated " + what, pos_);
        std::make_unsigned_t<T> u = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) u |= static_cast<std::make_unsigned_t<T>>(bytes_[pos_ + i]) << (8 * i);
        pos_ += sizeof(T);
        return static_cast<T>(u);
    }

    std::span<const std::uint8_t> take(std::size_t n, const std::string& what) {
        if (remaining() < n)
            throw FormatError(fmt::format("{}: needs {} bytes but only {} remain", what, n, remaining()), pos_);
        auto s = bytes_.subspan(pos_, n);
        pos_ += n;
        return s;
    }

private:
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> save_weights(const WeightMap& weights) {
    static_assert(sizeof(float) == 4 && std::numeric_limits<float>::is_iec559);
    std::vector<std::uint8_t> out(kMagic, kMagic + 4);
    put_le<std::uint32_t>(out, kVersion);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(weights.size()));
    for (const auto& [name, t] : weights) {
        if (name.empty() || name.size() > 0xFFFF) throw ValidationError("weight name length must be 1..65535");
        if (t.empty()) throw ValidationError("weight '" + name + "' is empty");
        put_le<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
        out.insert(out.end(), name.begin(), name.end());
        out.push_back(0);  // dtype f32
        out.push_back(static_cast<std::uint8_t>(t.rank()));
        for (auto d : t.shape()) put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
        for (float v : t.values()) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
    }
    return out;
}

WeightMap load_weights(std::span<const std::uint8_t> bytes) {
    Reader r(bytes);
    auto magic = r.take(4, "magic");
    if (std::memcmp(magic.data(), kMagic, 4) != 0) throw FormatError("bad magic, expected \"PCNW\"", 0);
    const auto version = r.get<std::uint32_t>("version");
    if (version != kVersion) throw FormatError(fmt::format("unsupported PCNW version {}", version), 4);
    const auto count = r.get<std::uint32_t>("tensor count");
    WeightMap out;
    for (std::uint32_t k = 0; k < count; ++k) {
        const std::size_t entry_at = r.pos();
        const auto len = r.get<std::uint16_t>(fmt::format("name length of tensor #{}", k));
        auto name_bytes = r.take(len, fmt::format("name of tensor #{}", k));
        std::string name(name_bytes.begin(), name_bytes.end());
        if (name.empty()) throw FormatError(fmt::format("tensor #{} has an empty name", k), entry_at);
        const auto dtype = r.get<std::uint8_t>("dtype of tensor '" + name + "'");
        if (dtype != 0) throw FormatError(fmt::format("tensor '{}': unsupported dtype {}", name, dtype), r.pos() - 1);
        const auto ndim = r.get<std::uint8_t>("rank of tensor '" + name + "'");
        if (ndim < 1 || ndim > 4) throw FormatError(fmt::format("tensor '{}': rank {} outside 1..4", name, ndim), r.pos() - 1);
        Shape shape;
        std::uint64_t numel = 1;
        for (std::uint8_t i = 0; i < ndim; ++i) {
            const auto d = r.get<std::uint32_t>("dims of tensor '" + name + "'");
            if (d == 0) throw FormatError(fmt::format("tensor '{}': zero extent", name), r.pos() - 4);
            shape.push_back(d);
            numel *= d;
        }
        if (numel > r.remaining() / 4)
            throw FormatError(fmt::format("tensor '{}': length field claims {} values but only {} bytes remain", name,
                                          numel, r.remaining()),
                              r.pos());
        auto payload = r.take(static_cast<std::size_t>(numel) * 4, "payload of tensor '" + name + "'");
        std::vector<float> v(numel);
        for (std::size_t i = 0; i < numel; ++i) {
            std::uint32_t u = 0;
            for (int b = 0; b < 4; ++b) u |= std::uint32_t{payload[4 * i + b]} << (8 * b);
            v[i] = std::bit_cast<float>(u);
        }
        if (!out.emplace(name, Tensor(std::move(shape), std::move(v))).second)
            throw FormatError("duplicate tensor name '" + name + "'", entry_at);
    }
    if (r.remaining() != 0) throw FormatError("trailing bytes after last tensor", r.pos());
    return out;
}

// ---------------------------------------------------------------- files

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path.string());
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(f), {});
}

void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw std::runtime_error("cannot write " + tmp.string());
        f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!f) throw std::runtime_error("write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
    write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

}  // namespace pcnet
