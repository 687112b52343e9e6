#include "rfl/data_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace rfl {

namespace fs = std::filesystem;

// --- Dataset -----------------------------------------------------------------

void Dataset::validate() const {
    if (images.rank() != 4) {
        throw InputError("dataset " + name + ": images must be [N,C,H,W], got " +
                         shape_str(images.shape()));
    }
    if (images.shape()[0] != size()) {
        throw InputError("dataset " + name + ": " + std::to_string(size()) +
                         " labels for " + std::to_string(images.shape()[0]) + " images");
    }
    for (int y : labels) {
        if (y < 0 || y >= classes) {
            throw InputError("dataset " + name + ": label " + std::to_string(y) +
                             " outside [0, " + std::to_string(classes) + ")");
        }
    }
    for (std::int64_t i = 0; i < images.numel(); ++i) {
        const double v = images.get_flat(i);
        if (!(v >= 0.0 && v <= 1.0)) {
            throw InputError("dataset " + name + ": pixel " + std::to_string(v) +
                             " outside [0,1]");
        }
    }
}

// --- IDX ----------------------------------------------------------------------

namespace {

std::vector<std::uint8_t> read_all(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return bytes;
}

std::uint32_t read_u32_be(const std::vector<std::uint8_t>& b, std::size_t off,
                          const std::string& path) {
    if (off + 4 > b.size()) {
        throw FormatError(path + ": truncated at offset " + std::to_string(off));
    }
    return (std::uint32_t(b[off]) << 24) | (std::uint32_t(b[off + 1]) << 16) |
           (std::uint32_t(b[off + 2]) << 8) | std::uint32_t(b[off + 3]);
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
    const auto ib = read_all(images_path);
    const auto lb = read_all(labels_path);
    const std::uint32_t im_magic = read_u32_be(ib, 0, images_path);
    if (im_magic != 2051) {
        throw FormatError(images_path + ": bad magic " + std::to_string(im_magic) +
                          " at offset 0 (want 2051)");
    }
    const std::uint32_t lb_magic = read_u32_be(lb, 0, labels_path);
    if (lb_magic != 2049) {
        throw FormatError(labels_path + ": bad magic " + std::to_string(lb_magic) +
                          " at offset 0 (want 2049)");
    }
    const std::uint32_t n = read_u32_be(ib, 4, images_path);
    const std::uint32_t rows = read_u32_be(ib, 8, images_path);
    const std::uint32_t cols = read_u32_be(ib, 12, images_path);
    const std::uint32_t n_labels = read_u32_be(lb, 4, labels_path);
    if (n != n_labels) {
        throw FormatError("IDX pair: " + std::to_string(n) + " images but " +
                          std::to_string(n_labels) + " labels");
    }
    const std::size_t want_img = 16 + std::size_t(n) * rows * cols;
    if (ib.size() != want_img) {
        throw FormatError(images_path + ": payload is " + std::to_string(ib.size() - 16) +
                          " bytes at offset 16, want " + std::to_string(want_img - 16));
    }
    if (lb.size() != 8 + std::size_t(n)) {
        throw FormatError(labels_path + ": payload is " + std::to_string(lb.size() - 8) +
                          " bytes at offset 8, want " + std::to_string(n));
    }
    Dataset ds;
    ds.name = "idx";
    ds.images = Tensor::zeros({std::int64_t(n), 1, std::int64_t(rows), std::int64_t(cols)},
                              Dtype::f32);
    auto px = ds.images.data<float>();
    for (std::size_t i = 0; i < std::size_t(n) * rows * cols; ++i) {
        px[static_cast<std::int64_t>(i)] = static_cast<float>(ib[16 + i]) / 255.0f;
    }
    ds.labels.resize(n);
    int max_label = 0;
    for (std::uint32_t i = 0; i < n; ++i) {
        ds.labels[i] = lb[8 + i];
        max_label = std::max(max_label, ds.labels[i]);
    }
    ds.classes = max_label + 1;
    ds.validate();
    return ds;
}

// --- CIFAR-10 binary ------------------------------------------------------------

Dataset load_cifar10_bin(const std::vector<std::string>& batch_paths) {
    constexpr std::size_t kRecord = 3073;  // 1 label byte + 3*32*32 pixels
    std::vector<std::uint8_t> all;
    for (const auto& p : batch_paths) {
        auto b = read_all(p);
        if (b.size() % kRecord != 0) {
            throw FormatError(p + ": size " + std::to_string(b.size()) +
                              " is not a multiple of 3073-byte records");
        }
        if (b.empty()) {
            std::fprintf(stderr, "warning: %s is empty (0 records)\n", p.c_str());
        }
        all.insert(all.end(), b.begin(), b.end());
    }
    const std::int64_t n = static_cast<std::int64_t>(all.size() / kRecord);
    Dataset ds;
    ds.name = "cifar10";
    ds.classes = 10;
    ds.images = Tensor::zeros({n, 3, 32, 32}, Dtype::f32);
    ds.labels.resize(static_cast<std::size_t>(n));
    auto px = ds.images.data<float>();
    for (std::int64_t i = 0; i < n; ++i) {
        const std::uint8_t* rec = all.data() + std::size_t(i) * kRecord;
        if (rec[0] > 9) {
            throw FormatError("cifar10: label byte " + std::to_string(rec[0]) +
                              " at record " + std::to_string(i));
        }
        ds.labels[static_cast<std::size_t>(i)] = rec[0];
        for (std::int64_t j = 0; j < 3072; ++j) {
            px[i * 3072 + j] = static_cast<float>(rec[1 + j]) / 255.0f;
        }
    }
    ds.validate();
    return ds;
}

// --- synthetic digits ------------------------------------------------------------

namespace {

// Seven-segment bitmasks, segments A..G = bits 0..6.
constexpr int kDigitSegments[10] = {63, 6, 91, 79, 102, 109, 125, 7, 127, 111};

void render_glyph(std::vector<float>& canvas, int side, int digit, int dy, int dx,
                  float amplitude) {
    const int gh = std::max(7, (side * 68) / 100);
    const int gw = std::max(5, (side * 44) / 100);
    const int t = std::max(2, side / 9);
    const int mid = gh / 2;
    const int oy = (side - gh) / 2 + dy;
    const int ox = (side - gw) / 2 + dx;
    const int segs = kDigitSegments[digit];
    const auto fill = [&](int y0, int y1, int x0, int x1) {
        for (int y = y0; y < y1; ++y) {
            for (int x = x0; x < x1; ++x) {
                const int cy = oy + y, cx = ox + x;
                if (cy >= 0 && cy < side && cx >= 0 && cx < side) {
                    canvas[static_cast<std::size_t>(cy * side + cx)] = amplitude;
                }
            }
        }
    };
    if (segs & 1) fill(0, t, 0, gw);                       // A  top
    if (segs & 2) fill(0, mid, gw - t, gw);                // B  top-right
    if (segs & 4) fill(mid, gh, gw - t, gw);               // C  bottom-right
    if (segs & 8) fill(gh - t, gh, 0, gw);                 // D  bottom
    if (segs & 16) fill(mid, gh, 0, t);                    // E  bottom-left
    if (segs & 32) fill(0, mid, 0, t);                     // F  top-left
    if (segs & 64) fill(mid - t / 2, mid - t / 2 + t, 0, gw);  // G  middle
}

void blur3(std::vector<float>& img, int side) {
    // One separable [1 2 1]/4 pass to soften stroke edges.
    std::vector<float> tmp(img.size());
    for (int y = 0; y < side; ++y) {
        for (int x = 0; x < side; ++x) {
            const float l = img[static_cast<std::size_t>(y * side + std::max(0, x - 1))];
            const float c = img[static_cast<std::size_t>(y * side + x)];
            const float r = img[static_cast<std::size_t>(y * side + std::min(side - 1, x + 1))];
            tmp[static_cast<std::size_t>(y * side + x)] = 0.25f * l + 0.5f * c + 0.25f * r;
        }
    }
    for (int x = 0; x < side; ++x) {
        for (int y = 0; y < side; ++y) {
            const float u = tmp[static_cast<std::size_t>(std::max(0, y - 1) * side + x)];
            const float c = tmp[static_cast<std::size_t>(y * side + x)];
            const float d = tmp[static_cast<std::size_t>(std::min(side - 1, y + 1) * side + x)];
            img[static_cast<std::size_t>(y * side + x)] = 0.25f * u + 0.5f * c + 0.25f * d;
        }
    }
}

}  // namespace

Dataset make_synthetic_digits(int lo_class, int hi_class, int per_class, int side,
                              RngStream rng) {
    if (lo_class < 0 || hi_class > 9 || lo_class > hi_class) {
        throw ConfigError("synthetic digits: class range must lie inside 0..9");
    }
    if (per_class <= 0 || side < 12) {
        throw ConfigError("synthetic digits: need per_class > 0 and side >= 12");
    }
    const int k = hi_class - lo_class + 1;
    const std::int64_t n = static_cast<std::int64_t>(k) * per_class;
    Dataset ds;
    ds.name = "synth-digits-" + std::to_string(lo_class) + "-" + std::to_string(hi_class);
    ds.classes = k;
    ds.images = Tensor::zeros({n, 1, side, side}, Dtype::f32);
    ds.labels.resize(static_cast<std::size_t>(n));
    auto px = ds.images.data<float>();
    RngStream stream = rng.substream("synthetic-digits");
    const int max_shift = std::max(1, side / 10);
    std::vector<float> canvas(static_cast<std::size_t>(side) * side);
    std::int64_t sample = 0;
    for (int digit = lo_class; digit <= hi_class; ++digit) {
        for (int i = 0; i < per_class; ++i, ++sample) {
            std::fill(canvas.begin(), canvas.end(), 0.0f);
            const auto amp = static_cast<float>(stream.uniform(0.70, 1.0));
            const int dy = static_cast<int>(stream.uniform(0, 2 * max_shift + 1)) - max_shift;
            const int dx = static_cast<int>(stream.uniform(0, 2 * max_shift + 1)) - max_shift;
            render_glyph(canvas, side, digit, dy, dx, amp);
            blur3(canvas, side);
            float* dst = px.data() + sample * side * side;
            for (int j = 0; j < side * side; ++j) {
                const float noisy =
                    canvas[static_cast<std::size_t>(j)] +
                    static_cast<float>(stream.normal() * 0.08);
                dst[j] = std::min(1.0f, std::max(0.0f, noisy));
            }
            ds.labels[static_cast<std::size_t>(sample)] = digit - lo_class;
        }
    }
    ds.validate();
    return ds;
}

Dataset filter_classes(const Dataset& ds, int lo, int hi) {
    if (lo < 0 || hi >= ds.classes || lo > hi) {
        throw ConfigError("filter_classes: range outside dataset classes");
    }
    std::vector<std::int64_t> keep;
    for (std::int64_t i = 0; i < ds.size(); ++i) {
        const int y = ds.labels[static_cast<std::size_t>(i)];
        if (y >= lo && y <= hi) keep.push_back(i);
    }
    Dataset out;
    out.name = ds.name + "-cls" + std::to_string(lo) + "-" + std::to_string(hi);
    out.classes = hi - lo + 1;
    const Shape& s = ds.images.shape();
    const std::int64_t item = s[1] * s[2] * s[3];
    out.images =
        Tensor::zeros({static_cast<std::int64_t>(keep.size()), s[1], s[2], s[3]}, Dtype::f32);
    out.labels.resize(keep.size());
    auto src = ds.images.data<float>();
    auto dst = out.images.data<float>();
    for (std::size_t i = 0; i < keep.size(); ++i) {
        std::memcpy(dst.data() + static_cast<std::int64_t>(i) * item,
                    src.data() + keep[i] * item, static_cast<std::size_t>(item) * sizeof(float));
        out.labels[i] = ds.labels[static_cast<std::size_t>(keep[i])] - lo;
    }
    return out;
}

// --- split -----------------------------------------------------------------------

namespace {

Dataset take_indices(const Dataset& ds, const std::vector<std::int64_t>& idx,
                     const std::string& suffix) {
    Dataset out;
    out.name = ds.name + suffix;
    out.classes = ds.classes;
    const Shape& s = ds.images.shape();
    const std::int64_t item = s[1] * s[2] * s[3];
    out.images =
        Tensor::zeros({static_cast<std::int64_t>(idx.size()), s[1], s[2], s[3]}, Dtype::f32);
    out.labels.resize(idx.size());
    auto src = ds.images.data<float>();
    auto dst = out.images.data<float>();
    for (std::size_t i = 0; i < idx.size(); ++i) {
        std::memcpy(dst.data() + static_cast<std::int64_t>(i) * item,
                    src.data() + idx[i] * item, static_cast<std::size_t>(item) * sizeof(float));
        out.labels[i] = ds.labels[static_cast<std::size_t>(idx[i])];
    }
    return out;
}

}  // namespace

Splits split(const Dataset& ds, const SplitSpec& spec, const RngStream& rng) {
    RngStream stream = rng.substream(spec.seed_label);
    std::vector<std::vector<std::int64_t>> by_class(static_cast<std::size_t>(ds.classes));
    for (std::int64_t i = 0; i < ds.size(); ++i) {
        by_class[static_cast<std::size_t>(ds.labels[static_cast<std::size_t>(i)])].push_back(i);
    }
    std::vector<std::int64_t> train_idx, val_idx, test_idx;
    for (int c = 0; c < ds.classes; ++c) {
        auto& members = by_class[static_cast<std::size_t>(c)];
        const auto count = static_cast<int>(members.size());
        const int want_train =
            (spec.official || spec.train_per_class < 0) ? count - spec.val_per_class
                                                        : spec.train_per_class;
        if (want_train < 0 || want_train + spec.val_per_class > count) {
            throw ConfigError("split: class " + std::to_string(c) + " has " +
                              std::to_string(count) + " samples, cannot take " +
                              std::to_string(spec.train_per_class) + " train + " +
                              std::to_string(spec.val_per_class) + " val");
        }
        const auto perm = stream.permutation(static_cast<std::uint32_t>(count));
        int at = 0;
        for (int i = 0; i < want_train; ++i) train_idx.push_back(members[perm[at++]]);
        for (int i = 0; i < spec.val_per_class; ++i) val_idx.push_back(members[perm[at++]]);
        while (at < count) test_idx.push_back(members[perm[at++]]);
    }
    std::sort(train_idx.begin(), train_idx.end());
    std::sort(val_idx.begin(), val_idx.end());
    std::sort(test_idx.begin(), test_idx.end());
    return Splits{take_indices(ds, train_idx, "-train"), take_indices(ds, val_idx, "-val"),
                  take_indices(ds, test_idx, "-test")};
}

void gather_batch(const Dataset& ds, const std::uint32_t* idx, std::int64_t count,
                  Tensor& images_out, std::vector<int>& labels_out, Dtype dtype) {
    const Shape& s = ds.images.shape();
    const std::int64_t item = s[1] * s[2] * s[3];
    images_out = Tensor::zeros({count, s[1], s[2], s[3]}, dtype);
    labels_out.resize(static_cast<std::size_t>(count));
    for (std::int64_t i = 0; i < count; ++i) {
        const std::int64_t src = idx[i];
        for (std::int64_t j = 0; j < item; ++j) {
            images_out.set_flat(i * item + j, ds.images.get_flat(src * item + j));
        }
        labels_out[static_cast<std::size_t>(i)] = ds.labels[static_cast<std::size_t>(src)];
    }
}

// --- checkpoints -------------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'R', 'F', 'L', '1'};
constexpr std::uint32_t kVersion = 1;

void put_u16(std::string& out, std::uint16_t v) {
    out.push_back(static_cast<char>(v & 0xFF));
    out.push_back(static_cast<char>((v >> 8) & 0xFF));
}
void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
void put_f32(std::string& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
}

struct Reader {
    const std::vector<std::uint8_t>& b;
    const std::string& path;
    std::size_t off = 0;

    void require(std::size_t k) const {
        if (off + k > b.size()) {
            throw FormatError(path + ": checkpoint truncated at offset " + std::to_string(off));
        }
    }
    std::uint16_t u16() {
        require(2);
        const std::uint16_t v = std::uint16_t(b[off]) | (std::uint16_t(b[off + 1]) << 8);
        off += 2;
        return v;
    }
    std::uint32_t u32() {
        require(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t(b[off + std::size_t(i)]) << (8 * i);
        off += 4;
        return v;
    }
    std::uint64_t u64() {
        require(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= std::uint64_t(b[off + std::size_t(i)]) << (8 * i);
        off += 8;
        return v;
    }
    float f32() {
        const std::uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
    std::uint8_t u8() {
        require(1);
        return b[off++];
    }
    std::string str(std::size_t k) {
        require(k);
        std::string s(reinterpret_cast<const char*>(b.data() + off), k);
        off += k;
        return s;
    }
};

void append_entry(std::string& out, const std::string& name, Role role, bool trainable,
                  const Tensor& value) {
    if (name.size() > 0xFFFF) throw ContractError("checkpoint: name too long");
    put_u16(out, static_cast<std::uint16_t>(name.size()));
    out.append(name);
    out.push_back(static_cast<char>(role));
    out.push_back(static_cast<char>(trainable ? 1 : 0));
    const Shape& s = value.shape();
    out.push_back(static_cast<char>(s.size()));
    for (std::int64_t d : s) put_u64(out, static_cast<std::uint64_t>(d));
    for (std::int64_t i = 0; i < value.numel(); ++i) {
        put_f32(out, static_cast<float>(value.get_flat(i)));
    }
}

Tensor meta_values(const std::vector<double>& vals) {
    return Tensor::from_values({static_cast<std::int64_t>(vals.size())}, vals, Dtype::f32);
}

}  // namespace

void save_checkpoint(const Model& model, const std::string& path) {
    if (model.dtype == Dtype::f64) {
        std::fprintf(stderr,
                     "warning: checkpoint %s stores 32-bit floats; 64-bit parameters are "
                     "down-converted\n",
                     path.c_str());
    }
    std::string body;
    std::vector<std::pair<std::string, Tensor>> meta;
    meta.emplace_back("meta.arch", meta_values({model.arch == Arch::vit ? 1.0 : 0.0}));
    if (model.arch == Arch::vit) {
        const ViTConfig& v = model.vit;
        meta.emplace_back("meta.vit",
                          meta_values({double(v.image_side), double(v.channels),
                                       double(v.patch), double(v.depth), double(v.width),
                                       double(v.heads), double(v.mlp_ratio),
                                       double(v.classes)}));
    } else {
        std::vector<double> widths(model.mlp_widths.begin(), model.mlp_widths.end());
        meta.emplace_back("meta.mlp_widths", meta_values(widths));
    }
    {
        std::vector<double> tf{double(model.transform.resize_to),
                               double(model.transform.mean.size())};
        tf.insert(tf.end(), model.transform.mean.begin(), model.transform.mean.end());
        tf.insert(tf.end(), model.transform.std_dev.begin(), model.transform.std_dev.end());
        meta.emplace_back("meta.transform", meta_values(tf));
    }
    if (model.attached) {
        const Strategy& s = *model.attached;
        meta.emplace_back("meta.strategy",
                          meta_values({double(static_cast<int>(s.kind)),
                                       double(s.adapter_reduction), double(s.lora_rank),
                                       s.lora_alpha, double(s.vpt_tokens)}));
    }
    for (const auto& [name, value] : meta) append_entry(body, name, Role::weight, false, value);
    for (const auto& name : model.params.names()) {
        const Param& p = model.params.at(name);
        append_entry(body, name, p.role, p.trainable, p.value);
    }
    std::string out;
    out.append(kMagic, 4);
    put_u32(out, kVersion);
    put_u32(out, static_cast<std::uint32_t>(meta.size() + model.params.size()));
    out.append(body);
    write_file_atomic(path, out);
}

Model load_checkpoint(const std::string& path) {
    const auto bytes = read_all(path);
    Reader r{bytes, path};
    r.require(4);
    if (std::memcmp(bytes.data(), kMagic, 4) != 0) {
        throw FormatError(path + ": bad checkpoint magic at offset 0");
    }
    r.off = 4;
    const std::uint32_t version = r.u32();
    if (version != kVersion) {
        throw FormatError(path + ": unsupported checkpoint version " + std::to_string(version));
    }
    const std::uint32_t entries = r.u32();
    Model model;
    model.dtype = Dtype::f32;
    bool saw_arch = false;
    std::optional<std::vector<double>> vit_meta, mlp_meta, transform_meta, strategy_meta;
    for (std::uint32_t e = 0; e < entries; ++e) {
        const std::uint16_t name_len = r.u16();
        const std::string name = r.str(name_len);
        const std::uint8_t role_code = r.u8();
        if (role_code > static_cast<std::uint8_t>(Role::adapter_up)) {
            throw FormatError(path + ": unknown role code " + std::to_string(role_code) +
                              " for entry " + name);
        }
        const std::uint8_t trainable = r.u8();
        const std::uint8_t rank = r.u8();
        Shape shape(rank);
        std::int64_t numel = 1;
        for (std::uint8_t d = 0; d < rank; ++d) {
            shape[d] = static_cast<std::int64_t>(r.u64());
            if (shape[d] <= 0) {
                throw FormatError(path + ": non-positive dimension in entry " + name);
            }
            numel *= shape[d];
        }
        Tensor value = Tensor::zeros(shape, Dtype::f32);
        for (std::int64_t i = 0; i < numel; ++i) value.set_flat(i, r.f32());
        if (name.rfind("meta.", 0) == 0) {
            std::vector<double> vals(static_cast<std::size_t>(numel));
            for (std::int64_t i = 0; i < numel; ++i)
                vals[static_cast<std::size_t>(i)] = value.get_flat(i);
            if (name == "meta.arch") {
                model.arch = vals.at(0) == 1.0 ? Arch::vit : Arch::mlp;
                saw_arch = true;
            } else if (name == "meta.vit") {
                vit_meta = vals;
            } else if (name == "meta.mlp_widths") {
                mlp_meta = vals;
            } else if (name == "meta.transform") {
                transform_meta = vals;
            } else if (name == "meta.strategy") {
                strategy_meta = vals;
            } else {
                throw FormatError(path + ": unknown meta entry " + name);
            }
            continue;
        }
        if (model.params.contains(name)) {
            throw FormatError(path + ": duplicate entry name " + name);
        }
        model.params.add(name, std::move(value), trainable != 0,
                         static_cast<Role>(role_code));
    }
    if (r.off != bytes.size()) {
        throw FormatError(path + ": trailing bytes at offset " + std::to_string(r.off));
    }
    if (!saw_arch || !transform_meta) {
        throw FormatError(path + ": missing model structure entries");
    }
    if (model.arch == Arch::vit) {
        if (!vit_meta || vit_meta->size() != 8) {
            throw FormatError(path + ": missing or malformed meta.vit");
        }
        const auto& v = *vit_meta;
        model.vit = ViTConfig{int(v[0]), int(v[1]), int(v[2]), int(v[3]),
                              int(v[4]), int(v[5]), int(v[6]), int(v[7])};
    } else {
        if (!mlp_meta) throw FormatError(path + ": missing meta.mlp_widths");
        model.mlp_widths.assign(mlp_meta->begin(), mlp_meta->end());
    }
    {
        const auto& tf = *transform_meta;
        if (tf.size() < 2) throw FormatError(path + ": malformed meta.transform");
        const int c = static_cast<int>(tf[1]);
        if (tf.size() != 2 + 2 * static_cast<std::size_t>(c)) {
            throw FormatError(path + ": malformed meta.transform");
        }
        model.transform.resize_to = static_cast<int>(tf[0]);
        model.transform.mean.assign(tf.begin() + 2, tf.begin() + 2 + c);
        model.transform.std_dev.assign(tf.begin() + 2 + c, tf.end());
    }
    if (strategy_meta) {
        if (strategy_meta->size() != 5) throw FormatError(path + ": malformed meta.strategy");
        const auto& s = *strategy_meta;
        Strategy st;
        st.kind = static_cast<StrategyKind>(static_cast<int>(s[0]));
        st.adapter_reduction = static_cast<int>(s[1]);
        st.lora_rank = static_cast<int>(s[2]);
        st.lora_alpha = s[3];
        st.vpt_tokens = static_cast<int>(s[4]);
        model.attached = st;
    }
    return model;
}

// --- metrics CSV ----------------------------------------------------------------

namespace {

constexpr const char* kCsvHeader = "run_id,stage,epoch,split,metric,value,seconds";

void check_field(const std::string& f) {
    if (f.find(',') != std::string::npos || f.find('\n') != std::string::npos) {
        throw ContractError("CSV field may not contain commas or newlines: " + f);
    }
}

}  // namespace

void write_metrics_csv(const std::vector<MetricsRow>& rows, const std::string& path) {
    std::string contents;
    if (fs::exists(path)) {
        std::ifstream in(path, std::ios::binary);
        std::ostringstream ss;
        ss << in.rdbuf();
        contents = ss.str();
        const std::string head = std::string(kCsvHeader) + "\n";
        if (contents.rfind(head, 0) != 0) {
            throw FormatError(path + ": existing file does not start with the metrics header");
        }
    } else {
        contents = std::string(kCsvHeader) + "\n";
    }
    char buf[64];
    for (const auto& row : rows) {
        check_field(row.run_id);
        check_field(row.stage);
        check_field(row.split);
        check_field(row.metric);
        contents += row.run_id + ',' + row.stage + ',' + std::to_string(row.epoch) + ',' +
                    row.split + ',' + row.metric + ',';
        std::snprintf(buf, sizeof buf, "%.6f", row.value);
        contents += buf;
        contents += ',';
        std::snprintf(buf, sizeof buf, "%.6f", row.seconds);
        contents += buf;
        contents += '\n';
    }
    write_file_atomic(path, contents);
}

std::vector<MetricsRow> read_metrics_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path);
    std::string line;
    if (!std::getline(in, line) || line != kCsvHeader) {
        throw FormatError(path + ": missing metrics header");
    }
    std::vector<MetricsRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::size_t pos = 0;
        while (true) {
            const std::size_t comma = line.find(',', pos);
            if (comma == std::string::npos) {
                fields.push_back(line.substr(pos));
                break;
            }
            fields.push_back(line.substr(pos, comma - pos));
            pos = comma + 1;
        }
        if (fields.size() != 7) {
            throw FormatError(path + ": malformed row: " + line);
        }
        MetricsRow row;
        row.run_id = fields[0];
        row.stage = fields[1];
        row.epoch = std::stoi(fields[2]);
        row.split = fields[3];
        row.metric = fields[4];
        row.value = std::stod(fields[5]);
        row.seconds = std::stod(fields[6]);
        rows.push_back(std::move(row));
    }
    return rows;
}

std::vector<std::string> csv_run_ids(const std::string& path) {
    std::vector<std::string> ids;
    if (!fs::exists(path)) return ids;
    for (const auto& row : read_metrics_csv(path)) {
        if (std::find(ids.begin(), ids.end(), row.run_id) == ids.end()) {
            ids.push_back(row.run_id);
        }
    }
    return ids;
}

// --- PGM ------------------------------------------------------------------------

void write_pgm(const std::string& path, int width, int height,
               const std::vector<std::uint8_t>& bytes) {
    if (static_cast<std::size_t>(width) * static_cast<std::size_t>(height) != bytes.size()) {
        throw ContractError("write_pgm: " + std::to_string(bytes.size()) + " bytes for " +
                            std::to_string(width) + "x" + std::to_string(height));
    }
    std::string out = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
    out.append(reinterpret_cast<const char*>(bytes.data()), bytes.size());
    write_file_atomic(path, out);
}

void write_file_atomic(const std::string& path, const std::string& contents) {
    const fs::path target(path);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    const fs::path tmp = target.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw FormatError("cannot write " + tmp.string());
        out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        if (!out) throw FormatError("short write to " + tmp.string());
    }
    fs::rename(tmp, target);
}

}  // namespace rfl
