// Python bindings for the core library: datasets, training, universal
// perturbation attacks, evaluation, Jacobian analysis, and the small linear
// algebra toolkit. Arrays cross the boundary as copies — every tensor a
// caller receives is theirs to mutate.

#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>
#include <optional>
#include <string>
#include <vector>

#include "uapguard/attack.hpp"
#include "uapguard/common.hpp"
#include "uapguard/data.hpp"
#include "uapguard/jacobian.hpp"
#include "uapguard/linalg.hpp"
#include "uapguard/nn.hpp"
#include "uapguard/rng.hpp"
#include "uapguard/sha256.hpp"
#include "uapguard/train.hpp"

namespace py = pybind11;
using namespace uapguard;

namespace {

Tensor tensor_from(const py::array& arr) {
    auto a = py::array_t<double, py::array::c_style | py::array::forcecast>::ensure(arr);
    if (!a) throw ArgumentError("expected a numeric array");
    std::vector<int64_t> shape(static_cast<size_t>(a.ndim()));
    for (py::ssize_t i = 0; i < a.ndim(); ++i) shape[static_cast<size_t>(i)] = a.shape(i);
    if (shape.empty()) throw ArgumentError("expected an array with at least one dimension");
    Tensor t = Tensor::zeros(shape);
    std::memcpy(t.data(), a.data(), sizeof(double) * static_cast<size_t>(t.size()));
    return t;
}

py::array_t<double> numpy_from(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    py::array_t<double> a(shape);
    std::memcpy(a.mutable_data(), t.data(), sizeof(double) * static_cast<size_t>(t.size()));
    return a;
}

py::array_t<uint8_t> numpy_from(const std::vector<uint8_t>& v) {
    return py::array_t<uint8_t>(std::vector<py::ssize_t>{static_cast<py::ssize_t>(v.size())}, v.data());
}

std::vector<uint8_t> labels_from(const py::array& arr) {
    auto a = py::array_t<uint8_t, py::array::c_style | py::array::forcecast>::ensure(arr);
    if (!a || a.ndim() != 1) throw ArgumentError("labels must be a one-dimensional integer array");
    return std::vector<uint8_t>(a.data(), a.data() + a.shape(0));
}

/// Images arrive as (N, H, W) or (N, 1, H, W); stored with the channel axis.
Tensor images_from(const py::array& arr) {
    Tensor t = tensor_from(arr);
    if (t.ndim() == 3) return t.reshaped({t.dim(0), 1, t.dim(1), t.dim(2)});
    if (t.ndim() == 4 && t.dim(1) == 1) return t;
    throw ArgumentError("images must be shaped (N, H, W) or (N, 1, H, W), got " + shape_to_string(t.shape()));
}

Dataset dataset_from(const py::array& images, const py::array& labels, std::string name, std::string split) {
    Dataset d;
    d.images = images_from(images);
    d.labels = labels_from(labels);
    if (d.images.dim(0) != static_cast<int64_t>(d.labels.size())) {
        throw ArgumentError("image and label counts disagree");
    }
    d.name = std::move(name);
    d.split = std::move(split);
    return d;
}

/// Optional python progress callback, invoked with the GIL re-acquired.
EpochCallback epoch_callback(const py::object& fn) {
    if (fn.is_none()) return {};
    return [fn](const EpochStats& s) {
        py::gil_scoped_acquire gil;
        fn(s);
    };
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Convolutional classifiers with Jacobian-norm regularization, universal adversarial "
              "perturbation attacks, and alignment analysis";
    m.attr("__version__") = std::string(kVersion);

    // ===== errors =====
    py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
    py::register_exception<ArgumentError>(m, "ArgumentError", PyExc_ValueError);
    py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
    py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);

    // ===== data =====
    py::class_<Dataset>(m, "Dataset", "A named split: images (N, 1, H, W) in [0, 1] plus uint8 labels")
        .def(py::init(&dataset_from), py::arg("images"), py::arg("labels"), py::arg("name") = "memory",
             py::arg("split") = "train")
        .def_property_readonly("images", [](const Dataset& d) { return numpy_from(d.images); })
        .def_property_readonly("labels", [](const Dataset& d) { return numpy_from(d.labels); })
        .def_readwrite("name", &Dataset::name)
        .def_readwrite("split", &Dataset::split)
        .def("__len__", &Dataset::size)
        .def("__repr__", [](const Dataset& d) {
            return "<Dataset " + d.name + "/" + d.split + ", " + std::to_string(d.size()) + " samples>";
        });

    m.def("load_dataset", &load_dataset, py::arg("root"), py::arg("name"), py::arg("split"),
          "Load an IDX image/label pair from <root>/<name> (split: 'train' or 'test')");
    m.def("verify_dataset", &verify_dataset, py::arg("root"), py::arg("name"),
          "Check that all four IDX files exist and parse; raises on failure");
    m.def("fetch_dataset", &fetch_dataset, py::arg("name"), py::arg("dest_root"), py::arg("base_url") = "",
          "Download and unpack a dataset by name into dest_root");
    m.def(
        "balanced_subset",
        [](const Dataset& d, int64_t per_class, uint64_t seed) {
            RngStream rng(seed);
            return balanced_subset(d, per_class, rng);
        },
        py::arg("dataset"), py::arg("per_class"), py::arg("seed") = 1,
        "Class-balanced draw of per_class samples from each of the 10 classes");
    m.def(
        "gather", [](const Dataset& d, const std::vector<int64_t>& idx) { return gather(d, idx); },
        py::arg("dataset"), py::arg("indices"), "Subset of a dataset by row indices, in order");

    py::enum_<PNorm>(m, "PNorm").value("two", PNorm::two).value("inf", PNorm::inf);

    // ===== networks =====
    py::class_<Network>(m, "Network", "A feed-forward convolutional classifier")
        .def_property_readonly("num_classes", &Network::num_classes)
        .def(
            "logits", [](const Network& net, const py::array& x) { return numpy_from(forward(net, images_from(x)).first); },
            py::arg("images"), "Raw class scores, shape (N, num_classes)")
        .def("__repr__",
             [](const Network& net) { return "<Network, " + std::to_string(net.num_classes()) + " classes>"; });

    m.def(
        "build_lenet",
        [](std::vector<int64_t> input_shape, int64_t num_classes, uint64_t seed) {
            RngStream rng(seed);
            return build_lenet(std::move(input_shape), num_classes, rng);
        },
        py::arg("input_shape"), py::arg("num_classes") = 10, py::arg("seed") = 1,
        "Freshly initialized classifier for inputs of the given (C, H, W) shape");
    m.def(
        "predict_labels",
        [](const Network& net, const py::array& images, int threads) {
            const Tensor t = images_from(images);
            std::vector<uint8_t> out;
            {
                py::gil_scoped_release nogil;
                out = predict_labels(net, t, threads);
            }
            return numpy_from(out);
        },
        py::arg("net"), py::arg("images"), py::arg("threads") = 1);
    m.def(
        "evaluate_clean",
        [](const Network& net, const Dataset& test_set, int threads) {
            py::gil_scoped_release nogil;
            return evaluate_clean(net, test_set, threads);
        },
        py::arg("net"), py::arg("test_set"), py::arg("threads") = 1, "Fraction of correctly classified samples");

    py::class_<Checkpoint>(m, "Checkpoint")
        .def_readonly("net", &Checkpoint::net)
        .def_readonly("config_hash", &Checkpoint::config_hash);
    m.def("save_checkpoint", &save_checkpoint, py::arg("net"), py::arg("path"), py::arg("config_hash") = "",
          "Serialize a network (with an optional provenance digest); byte-stable for identical nets");
    m.def("load_checkpoint", &load_checkpoint, py::arg("path"));

    // ===== training =====
    py::enum_<Optimizer>(m, "Optimizer")
        .value("adam", Optimizer::adam)
        .value("sgd_momentum", Optimizer::sgd_momentum);

    py::class_<JrMode>(m, "JrMode", "How the Jacobian-norm penalty is evaluated")
        .def_static("exact", &JrMode::exact_mode, "All num_classes backward passes per sample")
        .def_static("projection", &JrMode::projection, py::arg("n_proj") = 1,
                    "Unbiased random-projection estimate; n_proj draws per sample")
        .def_readonly("is_exact", &JrMode::exact)
        .def_readonly("n_proj", &JrMode::n_proj);

    py::class_<UatConfig>(m, "UatConfig", "Adversarial-training settings: a shared perturbation trained alongside")
        .def(py::init<>())
        .def_readwrite("epsilon", &UatConfig::epsilon)
        .def_readwrite("attack_step", &UatConfig::attack_step)
        .def_readwrite("inner_iters", &UatConfig::inner_iters);

    py::class_<TrainConfig>(m, "TrainConfig")
        .def(py::init<>())
        .def_readwrite("epochs", &TrainConfig::epochs)
        .def_readwrite("batch_size", &TrainConfig::batch_size)
        .def_readwrite("optimizer", &TrainConfig::optimizer)
        .def_readwrite("lr", &TrainConfig::lr)
        .def_readwrite("momentum", &TrainConfig::momentum)
        .def_readwrite("lambda_jr", &TrainConfig::lambda_jr)
        .def_readwrite("jr_mode", &TrainConfig::jr_mode)
        .def_readwrite("seed", &TrainConfig::seed)
        .def_readwrite("uat", &TrainConfig::uat)
        .def_readwrite("threads", &TrainConfig::threads);

    py::class_<EpochStats>(m, "EpochStats")
        .def_readonly("epoch", &EpochStats::epoch)
        .def_readonly("train_loss", &EpochStats::train_loss)
        .def_readonly("ce_loss", &EpochStats::ce_loss)
        .def_readonly("jr_term", &EpochStats::jr_term)
        .def_readonly("clean_acc", &EpochStats::clean_acc)
        .def("__repr__", [](const EpochStats& s) {
            return "<EpochStats epoch=" + std::to_string(s.epoch) + " loss=" + std::to_string(s.train_loss) +
                   " clean_acc=" + std::to_string(s.clean_acc) + ">";
        });

    py::class_<TrainedModel>(m, "TrainedModel")
        .def_readonly("net", &TrainedModel::net)
        .def_readonly("history", &TrainedModel::history);

    m.def(
        "train",
        [](const TrainConfig& config, const Dataset& train_set, const Dataset& test_set, const py::object& on_epoch) {
            const EpochCallback cb = epoch_callback(on_epoch);
            py::gil_scoped_release nogil;
            return train(config, train_set, test_set, cb);
        },
        py::arg("config"), py::arg("train_set"), py::arg("test_set"), py::arg("on_epoch") = py::none(),
        "Standard or Jacobian-regularized training; fully determined by config.seed");
    m.def(
        "uat_train",
        [](const TrainConfig& config, const Dataset& train_set, const Dataset& test_set, const py::object& on_epoch) {
            const EpochCallback cb = epoch_callback(on_epoch);
            py::gil_scoped_release nogil;
            return uat_train(config, train_set, test_set, cb);
        },
        py::arg("config"), py::arg("train_set"), py::arg("test_set"), py::arg("on_epoch") = py::none(),
        "Adversarial training against a universal perturbation (config.uat must be set)");

    // ===== attacks =====
    py::class_<Perturbation>(m, "Perturbation", "A single input-space offset applied to every image")
        .def_property_readonly("delta", [](const Perturbation& p) { return numpy_from(p.delta); })
        .def_readonly("epsilon", &Perturbation::epsilon)
        .def_readonly("norm_type", &Perturbation::norm_type)
        .def_readonly("provenance", &Perturbation::provenance);

    py::class_<AttackConfig>(m, "AttackConfig")
        .def(py::init<>())
        .def_readwrite("epsilon", &AttackConfig::epsilon)
        .def_readwrite("iterations", &AttackConfig::iterations)
        .def_readwrite("batch_size", &AttackConfig::batch_size)
        .def_readwrite("step_size", &AttackConfig::step_size)
        .def_readwrite("target_class", &AttackConfig::target_class)
        .def_readwrite("seed", &AttackConfig::seed)
        .def_readwrite("craft_split", &AttackConfig::craft_split)
        .def_readwrite("clamp_inputs", &AttackConfig::clamp_inputs)
        .def_readwrite("threads", &AttackConfig::threads);

    m.def(
        "sgd_uap_untargeted",
        [](const Network& net, const Dataset& data, const AttackConfig& config) {
            py::gil_scoped_release nogil;
            return sgd_uap_untargeted(net, data, config);
        },
        py::arg("net"), py::arg("data"), py::arg("config"),
        "Universal perturbation maximizing misclassification, by projected mini-batch ascent");
    m.def(
        "sgd_uap_targeted",
        [](const Network& net, const Dataset& data, const AttackConfig& config) {
            py::gil_scoped_release nogil;
            return sgd_uap_targeted(net, data, config);
        },
        py::arg("net"), py::arg("data"), py::arg("config"),
        "Universal perturbation steering predictions toward config.target_class");
    m.def(
        "svd_uap",
        [](const Network& net, const py::array& inputs, double epsilon, PNorm p, bool clamp) {
            const Tensor t = images_from(inputs);
            py::gil_scoped_release nogil;
            return svd_uap(net, t, epsilon, p, clamp);
        },
        py::arg("net"), py::arg("inputs"), py::arg("epsilon"), py::arg("p") = PNorm::inf, py::arg("clamp") = true,
        "Dominant singular direction of the stacked Jacobian of the given inputs, scaled to the budget");
    m.def(
        "evaluate_uer",
        [](const Network& net, const Dataset& test_set, const Perturbation& p, bool clamp, int threads) {
            py::gil_scoped_release nogil;
            return evaluate_uer(net, test_set, p, clamp, threads);
        },
        py::arg("net"), py::arg("test_set"), py::arg("perturbation"), py::arg("clamp") = true, py::arg("threads") = 1,
        "Universal evasion rate: fraction of the test set misclassified under the perturbation");
    m.def(
        "evaluate_tsr",
        [](const Network& net, const Dataset& test_set, const Perturbation& p, int target, bool clamp, int threads) {
            py::gil_scoped_release nogil;
            return evaluate_tsr(net, test_set, p, target, clamp, threads);
        },
        py::arg("net"), py::arg("test_set"), py::arg("perturbation"), py::arg("target"), py::arg("clamp") = true,
        py::arg("threads") = 1, "Targeted success rate: fraction pushed into the target class");

    py::enum_<AttackKind>(m, "AttackKind").value("sgd", AttackKind::sgd).value("svd", AttackKind::svd);

    py::class_<SweepRow>(m, "SweepRow")
        .def_readonly("epsilon", &SweepRow::epsilon)
        .def_readonly("value", &SweepRow::value)
        .def_readonly("sd", &SweepRow::sd);
    m.def(
        "epsilon_sweep",
        [](const Network& net, const Dataset& craft, const Dataset& test_set, const std::vector<double>& eps_list,
           AttackKind kind, bool targeted, const AttackConfig& base) {
            py::gil_scoped_release nogil;
            return epsilon_sweep(net, craft, test_set, eps_list, kind, targeted, base);
        },
        py::arg("net"), py::arg("craft_data"), py::arg("test_set"), py::arg("eps_list"),
        py::arg("kind") = AttackKind::sgd, py::arg("targeted") = false, py::arg("base_config") = AttackConfig{},
        "Craft and evaluate one perturbation per budget; targeted sweeps average over all target classes");

    m.def("save_perturbation", &save_perturbation, py::arg("perturbation"), py::arg("path_prefix"),
          py::arg("image_rows") = 28, py::arg("image_cols") = 28,
          "Write <prefix>.bin/.json (and a .pgm preview when the layout is one plane)");
    m.def("load_perturbation", &load_perturbation, py::arg("path_prefix"));

    // ===== jacobians and alignment =====
    m.def(
        "jacobian_exact",
        [](const Network& net, const py::array& x) { return numpy_from(jacobian_exact(net, tensor_from(x)).matrix); },
        py::arg("net"), py::arg("x"), "Exact (num_classes, input_size) Jacobian of one sample");
    m.def(
        "batch_jacobians",
        [](const Network& net, const py::array& images, int threads) {
            const Tensor t = images_from(images);
            std::vector<Tensor> js;
            {
                py::gil_scoped_release nogil;
                js = batch_jacobians(net, t, threads);
            }
            py::list out;
            for (const Tensor& j : js) out.append(numpy_from(j));
            return out;
        },
        py::arg("net"), py::arg("images"), py::arg("threads") = 1, "One Jacobian matrix per sample");
    m.def(
        "frobenius_sq_exact", [](const py::array& j) { return frobenius_sq_exact(tensor_from(j)); }, py::arg("jacobian"),
        "Squared Frobenius norm of a matrix");
    m.def(
        "frobenius_sq_estimate",
        [](const Network& net, const py::array& x, int64_t n_proj, uint64_t seed) {
            const Tensor t = tensor_from(x);
            RngStream rng(seed);
            py::gil_scoped_release nogil;
            return frobenius_sq_estimate(net, t, n_proj, rng);
        },
        py::arg("net"), py::arg("x"), py::arg("n_proj"), py::arg("seed") = 1,
        "Random-projection estimate of the squared Jacobian norm at one sample");
    m.def(
        "stacked_jacobian",
        [](const Network& net, const py::array& xs) { return numpy_from(stacked_jacobian(net, images_from(xs)).matrix); },
        py::arg("net"), py::arg("images"), "Vertical stack of per-sample Jacobians, shape (N * num_classes, input_size)");

    py::class_<BoundCheck>(m, "BoundCheck")
        .def_readonly("lhs", &BoundCheck::lhs)
        .def_readonly("rhs", &BoundCheck::rhs)
        .def_readonly("ratio", &BoundCheck::ratio);
    m.def(
        "alignment_bound_check",
        [](const py::array& a, const py::array& b) { return alignment_bound_check(tensor_from(a), tensor_from(b)); },
        py::arg("a"), py::arg("b"),
        "Frobenius inner product (lhs) against the norm product (rhs); ratio is their cosine in [-1, 1]");

    py::class_<StackedBound>(m, "StackedBound")
        .def_readonly("lhs", &StackedBound::lhs)
        .def_readonly("rhs", &StackedBound::rhs);
    m.def(
        "stacked_bound_check",
        [](const Network& net, const py::array& xs) { return stacked_bound_check(net, images_from(xs)); },
        py::arg("net"), py::arg("images"),
        "Aggregate stacked-Jacobian norm against its pairwise norm-sum bound (lhs <= rhs)");

    m.def(
        "cosine_similarity",
        [](const py::array& a, const py::array& b) {
            const CosineResult r = cosine_similarity(tensor_from(a), tensor_from(b));
            return py::make_tuple(r.value, r.degenerate);
        },
        py::arg("a"), py::arg("b"), "(cosine, degenerate) of two matrices under the Frobenius inner product");

    py::class_<SingularDirection>(m, "SingularDirection")
        .def_property_readonly("direction", [](const SingularDirection& s) { return numpy_from(s.direction); })
        .def_readonly("sigma", &SingularDirection::sigma);
    m.def(
        "dominant_singular_direction",
        [](const py::array& jbar, PNorm p, int iters, double tol) {
            const Tensor t = tensor_from(jbar);
            py::gil_scoped_release nogil;
            return dominant_singular_direction(t, p, iters, tol);
        },
        py::arg("jbar"), py::arg("p") = PNorm::two, py::arg("iters") = 2000, py::arg("tol") = 1e-12,
        "Input direction of maximal aggregate output change for a stacked Jacobian");

    py::enum_<PairMode>(m, "PairMode")
        .value("ordered", PairMode::ordered)
        .value("unique", PairMode::unique)
        .value("full", PairMode::full);

    py::class_<Histogram>(m, "Histogram")
        .def_readonly("lo", &Histogram::lo)
        .def_readonly("hi", &Histogram::hi)
        .def_readonly("bin_width", &Histogram::bin_width)
        .def_property_readonly("counts",
                               [](const Histogram& h) {
                                   return py::array_t<int64_t>(
                                       std::vector<py::ssize_t>{static_cast<py::ssize_t>(h.counts.size())},
                                       h.counts.data());
                               })
        .def_readonly("total", &Histogram::total);

    py::class_<SimilarityStats>(m, "SimilarityStats")
        .def_readonly("hist", &SimilarityStats::hist)
        .def_readonly("median", &SimilarityStats::median)
        .def_readonly("mean", &SimilarityStats::mean)
        .def_readonly("count", &SimilarityStats::count)
        .def_readonly("degenerate_count", &SimilarityStats::degenerate_count);
    m.def(
        "pairwise_similarity",
        [](const Network& net, const py::array& images, PairMode mode, int threads, double bin_width) {
            const Tensor t = images_from(images);
            py::gil_scoped_release nogil;
            return pairwise_similarity(net, t, mode, threads, bin_width);
        },
        py::arg("net"), py::arg("images"), py::arg("mode") = PairMode::ordered, py::arg("threads") = 1,
        py::arg("bin_width") = 0.02,
        "Histogram, median, and mean of pairwise Jacobian cosine similarities over an input set");

    // ===== linear algebra =====
    m.def(
        "svd",
        [](const py::array& a) {
            const SvdResult s = svd(tensor_from(a));
            return py::make_tuple(numpy_from(s.u), numpy_from(s.sigma), numpy_from(s.v));
        },
        py::arg("a"), "(U, sigma, V) with orthonormal columns and descending singular values; A = U @ diag(sigma) @ V.T");
    py::class_<PowerIterationResult>(m, "PowerIterationResult")
        .def_readonly("sigma", &PowerIterationResult::sigma)
        .def_property_readonly("v", [](const PowerIterationResult& r) { return numpy_from(r.v); })
        .def_readonly("iterations", &PowerIterationResult::iterations)
        .def_readonly("converged", &PowerIterationResult::converged);
    m.def(
        "power_iteration",
        [](const py::array& a, PNorm p, int q, int iters, double tol) {
            return power_iteration(tensor_from(a), p, q, iters, tol);
        },
        py::arg("a"), py::arg("p") = PNorm::two, py::arg("q") = 2, py::arg("iters") = 2000, py::arg("tol") = 1e-12,
        "Dominant direction under a unit p-norm input constraint");

    // ===== misc =====
    m.def(
        "sha256_hex", [](const std::string& s) { return sha256_hex(s); }, py::arg("data"),
        "Hex digest of a byte string");
}
