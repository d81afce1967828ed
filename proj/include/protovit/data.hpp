#pragma once

#include <array>
#include <string>
#include <vector>

#include "protovit/image.hpp"
#include "protovit/rng.hpp"
#include "protovit/tensor.hpp"

namespace protovit {

struct AugmentConfig {
    std::size_t target_size = 224;
    double hflip_prob = 0.5;
    double max_rotation_degrees = 10.0;
    std::array<double, 3> normalize_mean = {0.5, 0.5, 0.5};
    std::array<double, 3> normalize_std = {0.5, 0.5, 0.5};

    void validate() const {
        PV_CHECK(target_size > 0, "target_size must be positive");
        PV_CHECK(hflip_prob >= 0.0 && hflip_prob <= 1.0, "hflip_prob out of [0,1]");
    }
};

struct Dataset {
    std::vector<ByteImage> images;
    std::vector<int> labels;
    std::vector<std::string> class_names;  // dense label -> directory name
    std::string name;
    std::string split;

    std::size_t size() const { return images.size(); }
};

// Resize -> (train only: hflip, rotation) -> scale to [0,1] -> normalize.
// Training mode draws exactly two uniforms (flip coin, then angle) so a fixed
// rng substream reproduces the output bit-for-bit. Output is planar
// [C, target, target] in double precision.
std::vector<double> preprocess(const ByteImage &image, const AugmentConfig &cfg, bool training,
                               Rng &rng);

template <class T>
Tensor<T> preprocess_tensor(const ByteImage &image, const AugmentConfig &cfg, bool training,
                            Rng &rng) {
    std::vector<double> v = preprocess(image, cfg, training, rng);
    std::vector<T> d(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) d[i] = static_cast<T>(v[i]);
    return Tensor<T>::from_data({image.channels, cfg.target_size, cfg.target_size},
                                std::move(d));
}

// Preprocess a set of samples into one [B, C, S, S] batch.
template <class T>
Tensor<T> preprocess_batch(const Dataset &ds, const std::vector<std::size_t> &indices,
                           const AugmentConfig &cfg, bool training, Rng &rng) {
    PV_CHECK(!indices.empty(), "empty batch");
    const std::size_t c = ds.images[indices[0]].channels, s = cfg.target_size;
    std::vector<T> out;
    out.reserve(indices.size() * c * s * s);
    for (std::size_t idx : indices) {
        std::vector<double> v = preprocess(ds.images[idx], cfg, training, rng);
        for (double x : v) out.push_back(static_cast<T>(x));
    }
    return Tensor<T>::from_data({indices.size(), c, s, s}, std::move(out));
}

// Loads root/<split>/<class_name>/*.ppm; labels are dense integers assigned
// by ascending lexicographic class-directory order.
Dataset load_dataset(const std::string &root, const std::string &split);

// Writes a procedurally generated dataset (distinct per-class hue + oriented
// grating, per-image Gaussian noise) in the on-disk layout above, plus a
// manifest.txt. Returns the dataset as loaded back from disk.
Dataset generate_synthetic(const std::string &out_root, std::size_t num_classes,
                           std::size_t per_class, std::size_t image_size, std::uint64_t seed,
                           const std::string &split = "train");

// FNV-1a over the manifest file, recorded in run metadata.
std::uint64_t manifest_hash(const std::string &root, const std::string &split);

}  // namespace protovit
