#include "rmsd/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

namespace rmsd {

namespace fs = std::filesystem;

Tensorf image_to_tensor(const Image8& img) {
    Tensorf t(Shape{1, 3, img.height, img.width});
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x)
                t(0, c, y, x) = static_cast<float>(img.at(y, x, img.channels == 1 ? 0 : c)) / 255.0f;
    return t;
}

Tensorf mask_to_tensor(const Image8& img) {
    Tensorf t(Shape{1, 1, img.height, img.width});
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            int sum = 0;
            for (int c = 0; c < img.channels; ++c) sum += img.at(y, x, c);
            t(0, 0, y, x) = sum >= 128 * img.channels ? 1.0f : 0.0f;
        }
    return t;
}

Image8 tensor_to_image(const Tensorf& t) {
    const Shape s = t.shape();
    if (s.b != 1 || (s.c != 1 && s.c != 3)) throw ShapeError("tensor_to_image: expected (1,1|3,H,W), got " + s.str());
    Image8 img{s.w, s.h, s.c, std::vector<std::uint8_t>(s.size())};
    for (int c = 0; c < s.c; ++c)
        for (int y = 0; y < s.h; ++y)
            for (int x = 0; x < s.w; ++x)
                img.at(y, x, c) =
                    static_cast<std::uint8_t>(std::lround(std::clamp(t(0, c, y, x), 0.0f, 1.0f) * 255.0f));
    return img;
}

Sample load_sample(const fs::path& image_path, const fs::path& mask_path, std::string id) {
    const Image8 img = read_image(image_path);
    const Image8 mask = read_image(mask_path);
    if (img.width != mask.width || img.height != mask.height)
        throw ImageError(ImageError::Code::SizeMismatch,
                         "image " + image_path.string() + " is " + std::to_string(img.width) + "x" +
                             std::to_string(img.height) + " but mask " + mask_path.string() + " is " +
                             std::to_string(mask.width) + "x" + std::to_string(mask.height));
    if (id.empty()) id = image_path.stem().string();
    return Sample{image_to_tensor(img), mask_to_tensor(mask), std::move(id)};
}

namespace {

double cubic(double t) {
    constexpr double a = -0.5;
    t = std::abs(t);
    if (t <= 1.0) return ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0;
    if (t < 2.0) return ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a;
    return 0.0;
}

// Four clamped taps and weights per output coordinate along one axis.
struct Taps {
    std::vector<std::array<int, 4>> index;
    std::vector<std::array<double, 4>> weight;
};

Taps taps(int in, int out) {
    Taps t;
    t.index.resize(out);
    t.weight.resize(out);
    const double scale = static_cast<double>(in) / out;
    for (int o = 0; o < out; ++o) {
        const double src = (o + 0.5) * scale - 0.5;
        const int base = static_cast<int>(std::floor(src));
        for (int k = 0; k < 4; ++k) {
            const int i = base - 1 + k;
            t.index[o][k] = std::clamp(i, 0, in - 1);
            t.weight[o][k] = cubic(src - i);
        }
    }
    return t;
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> bicubic_resize(const Tensor<Scalar>& t, int out_h, int out_w) {
    if (out_h < 1 || out_w < 1) throw ShapeError("bicubic_resize: output size must be positive");
    const Shape s = t.shape();
    const Taps ty = taps(s.h, out_h);
    const Taps tx = taps(s.w, out_w);
    Tensor<Scalar> out(Shape{s.b, s.c, out_h, out_w});
    std::vector<double> rows(static_cast<std::size_t>(s.h) * out_w);
    for (int b = 0; b < s.b; ++b)
        for (int c = 0; c < s.c; ++c) {
            const Scalar* src = t.plane(b, c);
            for (int y = 0; y < s.h; ++y)
                for (int x = 0; x < out_w; ++x) {
                    double acc = 0.0;
                    for (int k = 0; k < 4; ++k) acc += tx.weight[x][k] * src[y * s.w + tx.index[x][k]];
                    rows[static_cast<std::size_t>(y) * out_w + x] = acc;
                }
            Scalar* dst = out.plane(b, c);
            for (int y = 0; y < out_h; ++y)
                for (int x = 0; x < out_w; ++x) {
                    double acc = 0.0;
                    for (int k = 0; k < 4; ++k)
                        acc += ty.weight[y][k] * rows[static_cast<std::size_t>(ty.index[y][k]) * out_w + x];
                    dst[y * out_w + x] = static_cast<Scalar>(acc);
                }
        }
    return out;
}

template Tensor<float> bicubic_resize(const Tensor<float>&, int, int);
template Tensor<double> bicubic_resize(const Tensor<double>&, int, int);

Tensorf resize_mask(const Tensorf& mask, int out_h, int out_w) {
    Tensorf r = bicubic_resize(mask, out_h, out_w);
    for (auto& v : r.data()) v = v >= 0.5f ? 1.0f : 0.0f;
    return r;
}

Tensorf resize_nearest(const Tensorf& t, int out_h, int out_w) {
    if (out_h < 1 || out_w < 1) throw ShapeError("resize_nearest: output size must be positive");
    const Shape s = t.shape();
    Tensorf out(Shape{s.b, s.c, out_h, out_w});
    auto src = [](int o, int in, int out_n) {
        return std::min(in - 1, static_cast<int>(std::floor((o + 0.5) * in / out_n)));
    };
    for (int b = 0; b < s.b; ++b)
        for (int c = 0; c < s.c; ++c)
            for (int y = 0; y < out_h; ++y)
                for (int x = 0; x < out_w; ++x) out(b, c, y, x) = t(b, c, src(y, s.h, out_h), src(x, s.w, out_w));
    return out;
}

// ---------------------------------------------------------------------------
// Augmentation

std::string AugmentOp::suffix() const {
    switch (kind) {
        case AugmentKind::Identity: return "orig";
        case AugmentKind::HFlip: return "hflip";
        case AugmentKind::VFlip: return "vflip";
        case AugmentKind::Sharpen: return "sharpen";
        case AugmentKind::Rotate: return "rot";
    }
    return "?";
}

std::string AugmentOp::str() const {
    if (kind != AugmentKind::Rotate) return suffix() == "orig" ? "none" : suffix();
    std::ostringstream os;
    os.precision(17);
    os << "rotate:" << degrees;
    return os.str();
}

AugmentOp AugmentOp::parse(const std::string& s) {
    if (s.empty() || s == "none") return {};
    if (s == "hflip") return {AugmentKind::HFlip};
    if (s == "vflip") return {AugmentKind::VFlip};
    if (s == "sharpen") return {AugmentKind::Sharpen};
    if (s.rfind("rotate:", 0) == 0) {
        std::size_t used = 0;
        double deg = 0;
        try {
            deg = std::stod(s.substr(7), &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used == 0 || used != s.size() - 7) throw ContractError("bad rotation angle in '" + s + "'");
        if (!(deg >= 0.0 && deg <= 90.0)) throw ContractError("rotation angle must be in [0, 90], got " + s);
        return {AugmentKind::Rotate, deg};
    }
    throw ContractError("unknown augmentation '" + s + "'");
}

namespace {

template <typename F>
Tensorf remap(const Tensorf& t, F&& source) {
    const Shape s = t.shape();
    Tensorf out(s);
    for (int c = 0; c < s.c; ++c)
        for (int y = 0; y < s.h; ++y)
            for (int x = 0; x < s.w; ++x) {
                const auto [sy, sx] = source(y, x);
                out(0, c, y, x) = t(0, c, sy, sx);
            }
    return out;
}

Tensorf sharpen(const Tensorf& t) {
    const Shape s = t.shape();
    Tensorf out(s);
    auto at = [&](int c, int y, int x) {
        return t(0, c, std::clamp(y, 0, s.h - 1), std::clamp(x, 0, s.w - 1));
    };
    for (int c = 0; c < s.c; ++c)
        for (int y = 0; y < s.h; ++y)
            for (int x = 0; x < s.w; ++x) {
                const float v = 5.0f * at(c, y, x) - at(c, y - 1, x) - at(c, y + 1, x) - at(c, y, x - 1) -
                                at(c, y, x + 1);
                out(0, c, y, x) = std::clamp(v, 0.0f, 1.0f);
            }
    return out;
}

// Inverse map of a counter-clockwise rotation about the image centre.
struct Rotation {
    double cx, cy, cs, sn;
    Rotation(const Shape& s, double degrees)
        : cx((s.w - 1) / 2.0), cy((s.h - 1) / 2.0) {
        if (degrees == 90.0) {
            cs = 0.0;
            sn = 1.0;
        } else {
            const double r = degrees * std::numbers::pi / 180.0;
            cs = std::cos(r);
            sn = std::sin(r);
        }
    }
    void source(int y, int x, double& sy, double& sx) const {
        const double dx = x - cx, dy = y - cy;
        sx = cx + cs * dx - sn * dy;
        sy = cy + sn * dx + cs * dy;
    }
};

Tensorf rotate_bilinear(const Tensorf& t, const Rotation& r) {
    const Shape s = t.shape();
    Tensorf out(s);
    auto px = [&](int c, int y, int x) -> double {
        return (y < 0 || y >= s.h || x < 0 || x >= s.w) ? 0.0 : t(0, c, y, x);
    };
    for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x) {
            double sy, sx;
            r.source(y, x, sy, sx);
            const int x0 = static_cast<int>(std::floor(sx)), y0 = static_cast<int>(std::floor(sy));
            const double fx = sx - x0, fy = sy - y0;
            for (int c = 0; c < s.c; ++c) {
                const double v = (1 - fy) * ((1 - fx) * px(c, y0, x0) + fx * px(c, y0, x0 + 1)) +
                                 fy * ((1 - fx) * px(c, y0 + 1, x0) + fx * px(c, y0 + 1, x0 + 1));
                out(0, c, y, x) = static_cast<float>(v);
            }
        }
    return out;
}

Tensorf rotate_nearest(const Tensorf& t, const Rotation& r) {
    const Shape s = t.shape();
    Tensorf out(s);
    for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x) {
            double sy, sx;
            r.source(y, x, sy, sx);
            const long iy = std::lround(sy), ix = std::lround(sx);
            if (iy < 0 || iy >= s.h || ix < 0 || ix >= s.w) continue;
            for (int c = 0; c < s.c; ++c) out(0, c, y, x) = t(0, c, static_cast<int>(iy), static_cast<int>(ix));
        }
    return out;
}

}  // namespace

Sample augment(const Sample& s, const AugmentOp& op) {
    if (s.image.shape().h != s.mask.shape().h || s.image.shape().w != s.mask.shape().w)
        throw ShapeError("augment: image " + s.image.shape().str() + " and mask " + s.mask.shape().str() + " differ");
    Sample out = s;
    const int h = s.image.height(), w = s.image.width();
    switch (op.kind) {
        case AugmentKind::Identity: break;
        case AugmentKind::HFlip: {
            auto f = [w](int y, int x) { return std::pair{y, w - 1 - x}; };
            out.image = remap(s.image, f);
            out.mask = remap(s.mask, f);
            break;
        }
        case AugmentKind::VFlip: {
            auto f = [h](int y, int x) { return std::pair{h - 1 - y, x}; };
            out.image = remap(s.image, f);
            out.mask = remap(s.mask, f);
            break;
        }
        case AugmentKind::Sharpen: out.image = sharpen(s.image); break;
        case AugmentKind::Rotate: {
            if (!(op.degrees >= 0.0 && op.degrees <= 90.0))
                throw ContractError("augment: rotation must be within [0, 90] degrees, got " + std::to_string(op.degrees));
            const Rotation r(s.image.shape(), op.degrees);
            out.image = rotate_bilinear(s.image, r);
            out.mask = rotate_nearest(s.mask, r);
            break;
        }
    }
    return out;
}

AugmentOp random_rotation(Rng& rng) { return {AugmentKind::Rotate, 90.0 * rng.uniform()}; }

// ---------------------------------------------------------------------------
// Manifests

namespace {

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream is(line);
    while (std::getline(is, cur, ',')) out.push_back(cur);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

std::string trim(std::string s) {
    const auto a = s.find_first_not_of(" \t\r");
    const auto b = s.find_last_not_of(" \t\r");
    return a == std::string::npos ? std::string{} : s.substr(a, b - a + 1);
}

}  // namespace

Manifest read_manifest(const fs::path& path, std::string split) {
    std::ifstream in(path);
    if (!in) throw ManifestError("cannot open manifest " + path.string());
    Manifest m;
    m.root = path.parent_path();
    m.split = std::move(split);
    std::set<std::string> ids;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        if (lineno == 1 && line.rfind("id,", 0) == 0) continue;
        auto cols = split_csv(line);
        for (auto& c : cols) c = trim(c);
        if (cols.size() != 3 && cols.size() != 4)
            throw ManifestError(path.string() + ":" + std::to_string(lineno) + ": expected id,image_path,mask_path[,op]");
        ManifestEntry e;
        e.id = cols[0];
        e.source_id = cols[0];
        e.image = fs::path(cols[1]).is_absolute() ? fs::path(cols[1]) : m.root / cols[1];
        e.mask = fs::path(cols[2]).is_absolute() ? fs::path(cols[2]) : m.root / cols[2];
        if (cols.size() == 4) {
            try {
                e.op = AugmentOp::parse(cols[3]);
            } catch (const ContractError& err) {
                throw ManifestError(path.string() + ":" + std::to_string(lineno) + ": " + err.what());
            }
        }
        if (e.id.empty()) throw ManifestError(path.string() + ":" + std::to_string(lineno) + ": empty id");
        if (!ids.insert(e.id).second)
            throw ManifestError(path.string() + ":" + std::to_string(lineno) + ": duplicate id '" + e.id + "'");
        m.entries.push_back(std::move(e));
    }
    return m;
}

void write_manifest(const fs::path& path, const Manifest& m) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw ManifestError("cannot write manifest " + path.string());
    const fs::path base = path.parent_path();
    auto rel = [&](const fs::path& p) {
        const fs::path r = p.lexically_relative(base);
        return (r.empty() || *r.begin() == "..") ? p.string() : r.string();
    };
    out << "id,image_path,mask_path,op\n";
    for (const auto& e : m.entries) out << e.id << ',' << rel(e.image) << ',' << rel(e.mask) << ',' << e.op.str() << '\n';
    if (!out) throw ManifestError("failed writing manifest " + path.string());
}

Manifest expand_4x(const Manifest& m, std::uint64_t seed) {
    Manifest out;
    out.root = m.root;
    out.split = m.split;
    out.entries.reserve(4 * m.size());
    for (std::size_t i = 0; i < m.size(); ++i) {
        const ManifestEntry& src = m.entries[i];
        Rng rng = Rng::derive(seed, i);
        const AugmentOp flip{rng.below(2) == 0 ? AugmentKind::HFlip : AugmentKind::VFlip};
        const AugmentOp ops[4] = {AugmentOp{}, flip, AugmentOp{AugmentKind::Sharpen}, random_rotation(rng)};
        for (const AugmentOp& op : ops) {
            ManifestEntry e = src;
            e.op = op;
            e.source_id = src.source_id;
            e.id = src.id + "~" + op.suffix();
            out.entries.push_back(std::move(e));
        }
    }
    return out;
}

Sample materialize(const ManifestEntry& e, std::optional<int> size) {
    Sample s = load_sample(e.image, e.mask, e.id);
    if (size && (s.image.height() != *size || s.image.width() != *size)) {
        s.image = bicubic_resize(s.image, *size, *size);
        for (auto& v : s.image.data()) v = std::clamp(v, 0.0f, 1.0f);
        s.mask = resize_mask(s.mask, *size, *size);
    }
    return augment(s, e.op);
}

// ---------------------------------------------------------------------------
// Synthetic lesions

double Ellipse::radius2(double x, double y) const {
    const double dx = x - cx, dy = y - cy;
    const double c = std::cos(angle), s = std::sin(angle);
    const double u = (c * dx + s * dy) / rx;
    const double v = (-s * dx + c * dy) / ry;
    return u * u + v * v;
}

namespace {

double smoothstep(double t) {
    t = std::clamp(t, 0.0, 1.0);
    return t * t * (3.0 - 2.0 * t);
}

struct Stroke {
    double x0, y0, x1, y1, x2, y2;  // quadratic Bezier control points
};

}  // namespace

std::vector<SynthItem> synth_dataset(int n, int size, std::uint64_t seed, const SynthOptions& opts) {
    if (n < 1) throw ContractError("synth_dataset: n must be positive");
    if (size < 8 || size % 8 != 0) throw ContractError("synth_dataset: size must be a positive multiple of 8");
    std::vector<SynthItem> items;
    items.reserve(n);
    const double sz = size;
    for (int i = 0; i < n; ++i) {
        Rng rng = Rng::derive(seed, static_cast<std::uint64_t>(i));
        SynthItem item;
        Tensorf mask(Shape{1, 1, size, size});

        // Lesion geometry by rejection until the area constraint holds.
        for (int attempt = 0;; ++attempt) {
            if (attempt == 1000) throw ContractError("synth_dataset: could not meet the lesion area constraint");
            item.lesions.clear();
            const int count = 1 + static_cast<int>(rng.below(2));
            for (int k = 0; k < count; ++k) {
                Ellipse e;
                e.rx = sz * rng.uniform(0.10, 0.32);
                e.ry = sz * rng.uniform(0.10, 0.32);
                e.cx = sz * rng.uniform(0.25, 0.75);
                e.cy = sz * rng.uniform(0.25, 0.75);
                e.angle = rng.uniform(0.0, std::numbers::pi);
                item.lesions.push_back(e);
            }
            std::size_t inside = 0;
            for (int y = 0; y < size; ++y)
                for (int x = 0; x < size; ++x) {
                    bool in = false;
                    for (const auto& e : item.lesions) in = in || e.contains(x, y);
                    mask(0, 0, y, x) = in ? 1.0f : 0.0f;
                    inside += in;
                }
            const double frac = static_cast<double>(inside) / (sz * sz);
            if (frac >= opts.min_area && frac <= opts.max_area) break;
        }

        // Skin-like background with low-frequency shading and fine grain.
        const double skin[3] = {rng.uniform(0.78, 0.92), rng.uniform(0.58, 0.70), rng.uniform(0.48, 0.60)};
        const double lesion[3] = {rng.uniform(0.30, 0.48), rng.uniform(0.18, 0.30), rng.uniform(0.12, 0.24)};
        struct Wave {
            double fx, fy, phase, amp;
        };
        Wave waves[3];
        for (auto& w : waves)
            w = {rng.uniform(0.5, 3.0) / sz, rng.uniform(0.5, 3.0) / sz, rng.uniform(0, 2 * std::numbers::pi),
                 rng.uniform(0.01, 0.03)};
        const double mottle_f = rng.uniform(4.0, 9.0) / sz;
        const double mottle_p = rng.uniform(0, 2 * std::numbers::pi);

        Tensorf image(Shape{1, 3, size, size});
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x) {
                double shade = 0;
                for (const auto& w : waves) shade += w.amp * std::sin(2 * std::numbers::pi * (w.fx * x + w.fy * y) + w.phase);
                // Soft edge centred on the mask boundary: alpha = 0.5 at radius 1.
                double alpha = 0;
                for (const auto& e : item.lesions)
                    alpha = std::max(alpha, smoothstep((1.10 - std::sqrt(e.radius2(x, y))) / 0.20));
                const double mottle =
                    0.04 * std::sin(2 * std::numbers::pi * mottle_f * (x + 0.7 * y) + mottle_p) * alpha;
                for (int c = 0; c < 3; ++c) {
                    const double grain = rng.uniform(-0.015, 0.015);
                    const double v = (1 - alpha) * skin[c] + alpha * lesion[c] + shade + mottle + grain;
                    image(0, c, y, x) = static_cast<float>(v);
                }
            }

        if (opts.hair) {
            const int strokes = static_cast<int>(rng.below(4));
            for (int k = 0; k < strokes; ++k) {
                const Stroke st{rng.uniform(0, sz), rng.uniform(0, sz), rng.uniform(0, sz),
                                rng.uniform(0, sz), rng.uniform(0, sz), rng.uniform(0, sz)};
                const double darkness = rng.uniform(0.5, 0.8);
                const int steps = 8 * size;
                for (int j = 0; j <= steps; ++j) {
                    const double t = static_cast<double>(j) / steps;
                    const double px = (1 - t) * (1 - t) * st.x0 + 2 * (1 - t) * t * st.x1 + t * t * st.x2;
                    const double py = (1 - t) * (1 - t) * st.y0 + 2 * (1 - t) * t * st.y1 + t * t * st.y2;
                    const int ix = static_cast<int>(std::lround(px)), iy = static_cast<int>(std::lround(py));
                    if (ix < 0 || ix >= size || iy < 0 || iy >= size) continue;
                    for (int c = 0; c < 3; ++c) {
                        float& v = image(0, c, iy, ix);
                        v = std::min(v, static_cast<float>(0.12 + (1 - darkness) * 0.3));
                    }
                }
            }
        }

        for (auto& v : image.data()) v = std::round(std::clamp(v, 0.0f, 1.0f) * 255.0f) / 255.0f;
        char id[32];
        std::snprintf(id, sizeof id, "synth_%03d", i);
        item.sample = Sample{std::move(image), std::move(mask), id};
        items.push_back(std::move(item));
    }
    return items;
}

fs::path write_synth(const fs::path& dir, const std::vector<SynthItem>& items) {
    fs::create_directories(dir / "images");
    fs::create_directories(dir / "masks");
    Manifest m;
    m.root = dir;
    for (const auto& it : items) {
        const fs::path img = dir / "images" / (it.sample.id + ".png");
        const fs::path msk = dir / "masks" / (it.sample.id + ".png");
        write_png(img, tensor_to_image(it.sample.image));
        Image8 mi = tensor_to_image(it.sample.mask);
        write_png(msk, mi);
        m.entries.push_back({it.sample.id, img, msk, {}, it.sample.id});
    }
    const fs::path manifest = dir / "manifest.csv";
    write_manifest(manifest, m);
    return manifest;
}

}  // namespace rmsd
