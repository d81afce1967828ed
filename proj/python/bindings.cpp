#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "protovit/evaluator.hpp"
#include "protovit/gradcheck.hpp"
#include "protovit/trainer.hpp"

namespace py = pybind11;
using namespace protovit;

namespace {

Tensor<double> from_numpy(const py::array_t<double, py::array::c_style | py::array::forcecast> &a) {
    Shape shape(a.ndim());
    for (py::ssize_t i = 0; i < a.ndim(); ++i) shape[i] = static_cast<std::size_t>(a.shape(i));
    std::vector<double> data(a.data(), a.data() + a.size());
    return Tensor<double>::from_data(shape, std::move(data));
}

py::array_t<double> to_numpy(const Tensor<double> &t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    py::array_t<double> out(shape);
    std::copy(t.data().begin(), t.data().end(), out.mutable_data());
    return out;
}

DistanceMode distance_mode(bool squared) {
    return squared ? DistanceMode::Squared : DistanceMode::Unsquared;
}

// Thin float-precision model handle: init from a preset or a checkpoint,
// forward images to embeddings, save back out.
struct Model {
    ViTParams<float> params;

    Model(const std::string &preset, std::uint64_t seed) {
        Rng rng = stream_rng(seed, kStreamInit);
        params = init_vit_params<float>(ViTConfig::preset(preset), rng);
    }
    explicit Model(const std::string &checkpoint)
        : params(load_checkpoint<float>(checkpoint)) {}

    py::array_t<double> forward(
        const py::array_t<double, py::array::c_style | py::array::forcecast> &images) {
        if (images.ndim() != 4) raise("forward expects images shaped [B, C, H, W]");
        Shape shape(4);
        for (py::ssize_t i = 0; i < 4; ++i) shape[i] = static_cast<std::size_t>(images.shape(i));
        std::vector<float> data(images.data(), images.data() + images.size());
        auto batch = Tensor<float>::from_data(shape, std::move(data));
        Rng drop(0);
        auto emb = forward_features(batch, params, false, drop);
        std::vector<double> wide(emb.data().begin(), emb.data().end());
        auto out = Tensor<double>::from_data(emb.shape(), std::move(wide));
        return to_numpy(out);
    }

    void save(const std::string &path) const { save_checkpoint(path, params); }

    py::dict config() const {
        const ViTConfig &c = params.config;
        py::dict d;
        d["image_size"] = c.image_size;
        d["patch_size"] = c.patch_size;
        d["embed_dim"] = c.embed_dim;
        d["depth"] = c.depth;
        d["num_heads"] = c.num_heads;
        return d;
    }

    std::vector<std::string> param_names() const {
        std::vector<std::string> names;
        for (const auto &[name, t] : params.named_parameters()) names.push_back(name);
        return names;
    }

    std::size_t num_parameters() const { return params.param_count(); }
};

TrainConfig make_train_config(std::size_t episodes, std::size_t ways, std::size_t shots,
                              std::size_t queries, std::uint64_t seed, double lr,
                              double weight_decay, bool decoupled, bool squared,
                              std::size_t eval_freq, std::size_t val_episodes,
                              std::size_t target_size, std::size_t image_size) {
    TrainConfig cfg;
    cfg.episodes = episodes;
    cfg.spec = {ways, shots, queries};
    cfg.seed = seed;
    cfg.optim.lr = lr;
    cfg.optim.weight_decay = weight_decay;
    cfg.optim.decoupled = decoupled;
    cfg.distance = distance_mode(squared);
    cfg.eval_freq = eval_freq;
    cfg.val_episodes = val_episodes;
    cfg.augment.target_size = target_size ? target_size : image_size;
    return cfg;
}

}  // namespace

PYBIND11_MODULE(_protovit, m) {
    m.doc() = "few-shot ViT prototypical-network pipeline";

    py::class_<Model>(m, "Model")
        .def(py::init<const std::string &, std::uint64_t>(), py::arg("preset") = "micro",
             py::arg("seed") = 42)
        .def_static("load", [](const std::string &path) { return Model(path); },
                    py::arg("checkpoint"))
        .def("forward", &Model::forward, py::arg("images"),
             "embed a [B, C, H, W] batch of normalized images -> [B, D]")
        .def("save", &Model::save, py::arg("path"))
        .def("config", &Model::config)
        .def("param_names", &Model::param_names)
        .def("num_parameters", &Model::num_parameters);

    m.def(
        "compute_prototypes",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast> &emb,
           const std::vector<int> &labels) {
            auto protos = compute_prototypes(from_numpy(emb), labels);
            return py::make_tuple(to_numpy(protos.matrix), protos.labels);
        },
        py::arg("embeddings"), py::arg("labels"),
        "class-mean prototypes; returns (matrix [N, D], ascending class labels)");

    m.def(
        "logits",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast> &queries,
           const py::array_t<double, py::array::c_style | py::array::forcecast> &protos,
           const std::vector<int> &proto_labels, bool squared) {
            Prototypes<double> p{from_numpy(protos), proto_labels};
            return to_numpy(logits(from_numpy(queries), p, distance_mode(squared)));
        },
        py::arg("queries"), py::arg("prototypes"), py::arg("proto_labels"),
        py::arg("squared") = true, "negative (squared) euclidean distance logits");

    m.def(
        "episodic_loss",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast> &logit_matrix,
           const std::vector<int> &local_labels) {
            return episodic_loss(from_numpy(logit_matrix), local_labels).item();
        },
        py::arg("logits"), py::arg("local_labels"),
        "mean cross-entropy over the episode's query set");

    m.def(
        "predict",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast> &logit_matrix) {
            return predict(from_numpy(logit_matrix));
        },
        py::arg("logits"));

    m.def("remap_labels", &remap_labels, py::arg("query_labels"), py::arg("proto_labels"));

    m.def(
        "sample_episode",
        [](const std::vector<int> &labels, std::size_t ways, std::size_t shots,
           std::size_t queries, std::uint64_t seed, std::uint64_t episode) {
            ClassIndex index = build_class_index(labels);
            Rng rng = stream_rng(seed, kStreamTrainEpisode, episode);
            EpisodeBatch ep = sample_episode(index, {ways, shots, queries}, rng);
            py::dict d;
            d["support_indices"] = ep.support_indices;
            d["support_labels"] = ep.support_labels;
            d["query_indices"] = ep.query_indices;
            d["query_labels"] = ep.query_labels;
            return d;
        },
        py::arg("labels"), py::arg("ways") = 5, py::arg("shots") = 5, py::arg("queries") = 15,
        py::arg("seed") = 42, py::arg("episode") = 0);

    m.def(
        "accuracy_stats",
        [](const std::vector<double> &accs) {
            AccuracyStats s = accuracy_stats(accs);
            py::dict d;
            d["mean"] = s.mean;
            d["std_dev"] = s.std_dev;
            d["ci95"] = s.ci95;
            return d;
        },
        py::arg("accuracies"));

    m.def(
        "generate_synthetic",
        [](const std::string &out_root, std::size_t classes, std::size_t per_class,
           std::size_t image_size, std::uint64_t seed, const std::string &split) {
            return generate_synthetic(out_root, classes, per_class, image_size, seed, split)
                .size();
        },
        py::arg("out_root"), py::arg("classes") = 5, py::arg("per_class") = 40,
        py::arg("image_size") = 32, py::arg("seed") = 1, py::arg("split") = "train",
        "write a synthetic PPM dataset; returns the number of images");

    m.def("manifest_hash", &manifest_hash, py::arg("root"), py::arg("split") = "train");

    m.def(
        "preprocess",
        [](const std::string &root, const std::string &split, std::size_t target_size,
           std::size_t index) {
            Dataset ds = load_dataset(root, split);
            PV_CHECK(index < ds.size(), "index ", index, " out of range for ", ds.size(),
                     " images");
            AugmentConfig cfg;
            cfg.target_size = target_size;
            Rng rng(0);
            return to_numpy(preprocess_tensor<double>(ds.images[index], cfg, false, rng));
        },
        py::arg("root"), py::arg("split"), py::arg("target_size"), py::arg("index") = 0,
        "eval-mode preprocessing of one dataset image -> [C, S, S]");

    m.def(
        "train",
        [](const std::string &data_root, const std::string &out_dir, const std::string &preset,
           std::size_t episodes, std::size_t ways, std::size_t shots, std::size_t queries,
           std::uint64_t seed, double lr, double weight_decay, bool decoupled, bool squared,
           std::size_t eval_freq, std::size_t val_episodes, std::size_t target_size,
           const std::string &split) {
            ViTConfig vcfg = ViTConfig::preset(preset);
            TrainConfig cfg =
                make_train_config(episodes, ways, shots, queries, seed, lr, weight_decay,
                                  decoupled, squared, eval_freq, val_episodes, target_size,
                                  vcfg.image_size);
            Dataset ds = load_dataset(data_root, split);
            Rng init_rng = stream_rng(seed, kStreamInit);
            ViTParams<float> params = init_vit_params<float>(vcfg, init_rng);
            OptimState<float> optim(params.named_parameters(), cfg.optim);
            TrainHistory history = train(params, ds, &ds, optim, cfg);
            if (!out_dir.empty())
                write_run_dir(out_dir, params, history, cfg, {{"preset", preset}});
            py::list rows;
            for (const auto &e : history.entries) {
                py::dict d;
                d["episode"] = e.episode;
                d["loss"] = e.loss;
                d["train_acc"] = e.train_acc;
                if (e.val_acc) d["val_acc"] = *e.val_acc;
                rows.append(d);
            }
            return rows;
        },
        py::arg("data_root"), py::arg("out_dir") = "", py::arg("preset") = "micro",
        py::arg("episodes") = 100, py::arg("ways") = 5, py::arg("shots") = 5,
        py::arg("queries") = 15, py::arg("seed") = 42, py::arg("lr") = 1e-4,
        py::arg("weight_decay") = 1e-4, py::arg("decoupled") = true, py::arg("squared") = true,
        py::arg("eval_freq") = 10, py::arg("val_episodes") = 50, py::arg("target_size") = 0,
        py::arg("split") = "train", "episodic training; returns the per-episode history");

    m.def(
        "evaluate",
        [](const std::string &checkpoint, const std::string &data_root, const std::string &split,
           std::size_t ways, std::size_t shots, std::size_t queries, std::size_t episodes,
           std::uint64_t seed, bool squared, std::size_t target_size, std::size_t workers) {
            ViTParams<float> params = load_checkpoint<float>(checkpoint);
            Dataset ds = load_dataset(data_root, split);
            AugmentConfig augment;
            augment.target_size = target_size ? target_size : params.config.image_size;
            EvalReport rep = evaluate(params, ds, {ways, shots, queries}, episodes, seed, augment,
                                      distance_mode(squared), 0, workers);
            py::dict d;
            d["mean_acc"] = rep.mean_acc;
            d["ci95_halfwidth"] = rep.ci95_halfwidth;
            d["std_dev"] = rep.std_dev;
            d["episodes_completed"] = rep.episodes_completed;
            d["report"] = report_text(rep);
            return d;
        },
        py::arg("checkpoint"), py::arg("data_root"), py::arg("split") = "train",
        py::arg("ways") = 5, py::arg("shots") = 5, py::arg("queries") = 15,
        py::arg("episodes") = 100, py::arg("seed") = 42, py::arg("squared") = true,
        py::arg("target_size") = 0, py::arg("workers") = 1);

    m.def(
        "gradcheck",
        [](const std::vector<std::string> &ops) {
            py::dict d;
            for (const auto &r : run_gradcheck(ops)) d[py::str(r.name)] = r.max_rel_err;
            return d;
        },
        py::arg("ops") = std::vector<std::string>{},
        "finite-difference gradient verification; returns max relative error per op");

    m.attr("GRADCHECK_TOL") = kGradCheckTol;
}
