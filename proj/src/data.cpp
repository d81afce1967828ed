#include "protovit/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "protovit/check.hpp"

namespace fs = std::filesystem;

namespace protovit {

namespace {

// Bilinear resize of one planar channel, float domain.
std::vector<double> resize_bilinear(const std::vector<double> &src, std::size_t channels,
                                    std::size_t h, std::size_t w, std::size_t target) {
    std::vector<double> out(channels * target * target);
    if (h == target && w == target) return src;
    const double sy = static_cast<double>(h) / static_cast<double>(target);
    const double sx = static_cast<double>(w) / static_cast<double>(target);
    for (std::size_t c = 0; c < channels; ++c) {
        const double *plane = src.data() + c * h * w;
        double *dst = out.data() + c * target * target;
        for (std::size_t y = 0; y < target; ++y) {
            double fy = (static_cast<double>(y) + 0.5) * sy - 0.5;
            fy = std::clamp(fy, 0.0, static_cast<double>(h - 1));
            std::size_t y0 = static_cast<std::size_t>(fy);
            std::size_t y1 = std::min(y0 + 1, h - 1);
            double wy = fy - static_cast<double>(y0);
            for (std::size_t x = 0; x < target; ++x) {
                double fx = (static_cast<double>(x) + 0.5) * sx - 0.5;
                fx = std::clamp(fx, 0.0, static_cast<double>(w - 1));
                std::size_t x0 = static_cast<std::size_t>(fx);
                std::size_t x1 = std::min(x0 + 1, w - 1);
                double wx = fx - static_cast<double>(x0);
                double top = plane[y0 * w + x0] * (1.0 - wx) + plane[y0 * w + x1] * wx;
                double bot = plane[y1 * w + x0] * (1.0 - wx) + plane[y1 * w + x1] * wx;
                dst[y * target + x] = top * (1.0 - wy) + bot * wy;
            }
        }
    }
    return out;
}

// Rotation about the image center, bilinear resampling, zero fill outside.
std::vector<double> rotate(const std::vector<double> &src, std::size_t channels,
                           std::size_t size, double degrees) {
    std::vector<double> out(src.size(), 0.0);
    const double rad = degrees * M_PI / 180.0;
    const double cs = std::cos(rad), sn = std::sin(rad);
    const double cx = (static_cast<double>(size) - 1.0) / 2.0;
    for (std::size_t c = 0; c < channels; ++c) {
        const double *plane = src.data() + c * size * size;
        double *dst = out.data() + c * size * size;
        for (std::size_t y = 0; y < size; ++y)
            for (std::size_t x = 0; x < size; ++x) {
                // inverse-rotate the output coordinate into the source image
                double dx = static_cast<double>(x) - cx;
                double dy = static_cast<double>(y) - cx;
                double sxf = cs * dx + sn * dy + cx;
                double syf = -sn * dx + cs * dy + cx;
                if (sxf < 0.0 || syf < 0.0 || sxf > static_cast<double>(size - 1) ||
                    syf > static_cast<double>(size - 1))
                    continue;
                std::size_t x0 = static_cast<std::size_t>(sxf);
                std::size_t y0 = static_cast<std::size_t>(syf);
                std::size_t x1 = std::min(x0 + 1, size - 1);
                std::size_t y1 = std::min(y0 + 1, size - 1);
                double wx = sxf - static_cast<double>(x0);
                double wy = syf - static_cast<double>(y0);
                double top = plane[y0 * size + x0] * (1.0 - wx) + plane[y0 * size + x1] * wx;
                double bot = plane[y1 * size + x0] * (1.0 - wx) + plane[y1 * size + x1] * wx;
                dst[y * size + x] = top * (1.0 - wy) + bot * wy;
            }
    }
    return out;
}

// Class-specific base color: a mid-gray tinted toward a hue equally spaced on
// the color wheel. The tint amplitude is deliberately small so the class
// signal does not dominate image-to-image variation; combined with the
// per-image brightness jitter below, freshly initialized models start near
// chance while the classes remain easily learnable.
constexpr double kClassTint = 0.042;
constexpr double kWaveAmp = 0.03;
constexpr double kNoiseStd = 0.05;
constexpr double kBrightnessJitter = 0.0925;

std::array<double, 3> class_base_rgb(std::size_t cls, std::size_t num_classes) {
    double hue = 2.0 * M_PI * static_cast<double>(cls) / static_cast<double>(num_classes);
    return {0.5 + kClassTint * std::cos(hue), 0.5 + kClassTint * std::cos(hue - 2.0944),
            0.5 + kClassTint * std::cos(hue + 2.0944)};
}

}  // namespace

std::vector<double> preprocess(const ByteImage &image, const AugmentConfig &cfg, bool training,
                               Rng &rng) {
    cfg.validate();
    PV_CHECK(image.channels >= 1 && !image.data.empty(), "undecodable image");
    std::vector<double> v(image.data.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(image.data[i]);
    v = resize_bilinear(v, image.channels, image.height, image.width, cfg.target_size);
    const std::size_t s = cfg.target_size;
    if (training) {
        double coin = rng.uniform01();
        if (coin < cfg.hflip_prob) {
            for (std::size_t c = 0; c < image.channels; ++c)
                for (std::size_t y = 0; y < s; ++y)
                    std::reverse(v.begin() + (c * s + y) * s, v.begin() + (c * s + y + 1) * s);
        }
        double angle = rng.uniform(-cfg.max_rotation_degrees, cfg.max_rotation_degrees);
        v = rotate(v, image.channels, s, angle);
    }
    for (std::size_t c = 0; c < image.channels; ++c) {
        double mean = cfg.normalize_mean[std::min<std::size_t>(c, 2)];
        double stdv = cfg.normalize_std[std::min<std::size_t>(c, 2)];
        for (std::size_t i = 0; i < s * s; ++i) {
            double &x = v[c * s * s + i];
            x = (x / 255.0 - mean) / stdv;
        }
    }
    return v;
}

Dataset load_dataset(const std::string &root, const std::string &split) {
    fs::path split_dir = fs::path(root) / split;
    PV_CHECK(fs::is_directory(split_dir), "missing split directory: ", split_dir.string());
    std::vector<fs::path> class_dirs;
    for (const auto &e : fs::directory_iterator(split_dir))
        if (e.is_directory()) class_dirs.push_back(e.path());
    std::sort(class_dirs.begin(), class_dirs.end());
    PV_CHECK(!class_dirs.empty(), "no class directories under ", split_dir.string());

    Dataset ds;
    ds.name = fs::path(root).filename().string();
    ds.split = split;
    for (std::size_t label = 0; label < class_dirs.size(); ++label) {
        ds.class_names.push_back(class_dirs[label].filename().string());
        std::vector<fs::path> files;
        for (const auto &e : fs::directory_iterator(class_dirs[label]))
            if (e.is_regular_file() && e.path().extension() == ".ppm") files.push_back(e.path());
        std::sort(files.begin(), files.end());
        PV_CHECK(!files.empty(), "empty class directory: ", class_dirs[label].string());
        for (const auto &f : files) {
            ds.images.push_back(read_ppm(f.string()));
            ds.labels.push_back(static_cast<int>(label));
        }
    }
    return ds;
}

Dataset generate_synthetic(const std::string &out_root, std::size_t num_classes,
                           std::size_t per_class, std::size_t image_size, std::uint64_t seed,
                           const std::string &split) {
    PV_CHECK(num_classes >= 2, "synthetic dataset needs at least 2 classes, got ", num_classes);
    fs::path split_dir = fs::path(out_root) / split;
    fs::create_directories(split_dir);
    std::ofstream manifest(fs::path(out_root) / "manifest.txt");
    PV_CHECK(manifest.good(), "cannot write manifest under ", out_root);

    const std::size_t s = image_size;
    for (std::size_t cls = 0; cls < num_classes; ++cls) {
        char cls_name[32];
        std::snprintf(cls_name, sizeof(cls_name), "class_%02zu", cls);
        fs::path cls_dir = split_dir / cls_name;
        fs::create_directories(cls_dir);
        auto base = class_base_rgb(cls, num_classes);
        const double freq = 2.0 + static_cast<double>(cls);
        const double theta = M_PI * static_cast<double>(cls) / static_cast<double>(num_classes);
        const double phase = 0.7 * static_cast<double>(cls);
        for (std::size_t n = 0; n < per_class; ++n) {
            Rng rng = Rng::substream(seed, (static_cast<std::uint64_t>(cls) << 32) | n);
            double bright = kBrightnessJitter * (2.0 * rng.uniform01() - 1.0);
            ByteImage img;
            img.channels = 3;
            img.height = s;
            img.width = s;
            img.data.resize(3 * s * s);
            for (std::size_t y = 0; y < s; ++y)
                for (std::size_t x = 0; x < s; ++x) {
                    double u = static_cast<double>(x) / static_cast<double>(s);
                    double v = static_cast<double>(y) / static_cast<double>(s);
                    double wave = kWaveAmp * std::sin(2.0 * M_PI * freq *
                                                         (u * std::cos(theta) + v * std::sin(theta)) +
                                                     phase);
                    for (std::size_t c = 0; c < 3; ++c) {
                        double val = base[c] + wave + bright + kNoiseStd * rng.normal();
                        val = std::clamp(val, 0.0, 1.0);
                        img.data[(c * s + y) * s + x] =
                            static_cast<std::uint8_t>(std::lround(val * 255.0));
                    }
                }
            char fname[32];
            std::snprintf(fname, sizeof(fname), "img_%04zu.ppm", n);
            write_ppm((cls_dir / fname).string(), img);
            manifest << split << "/" << cls_name << "/" << fname << " " << cls << "\n";
        }
    }
    manifest.close();
    return load_dataset(out_root, split);
}

std::uint64_t manifest_hash(const std::string &root, const std::string &split) {
    (void)split;
    std::ifstream in(fs::path(root) / "manifest.txt", std::ios::binary);
    std::uint64_t h = 0xcbf29ce484222325ull;
    if (!in.good()) return 0;
    char c;
    while (in.get(c)) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ull;
    }
    return h;
}

}  // namespace protovit
