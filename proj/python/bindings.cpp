#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>

#include "xlsor/augment.hpp"
#include "xlsor/cca.hpp"
#include "xlsor/dataset.hpp"
#include "xlsor/errors.hpp"
#include "xlsor/gradcheck.hpp"
#include "xlsor/metrics.hpp"
#include "xlsor/segnet.hpp"

namespace py = pybind11;
using namespace xlsor;

namespace {

Tensor tensor_from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
    std::vector<int> shape(static_cast<std::size_t>(a.ndim()));
    for (py::ssize_t i = 0; i < a.ndim(); ++i) shape[static_cast<std::size_t>(i)] = static_cast<int>(a.shape(i));
    Tensor t(shape);
    std::memcpy(t.data.data(), a.data(), sizeof(double) * t.size());
    return t;
}

py::array_t<double> array_from_tensor(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape.begin(), t.shape.end());
    py::array_t<double> a(shape);
    std::memcpy(a.mutable_data(), t.data.data(), sizeof(double) * t.size());
    return a;
}

BinaryMask mask_from_array(const py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>& a) {
    if (a.ndim() != 2) throw ShapeError("mask array must be HxW");
    BinaryMask m(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
    std::memcpy(m.data.data(), a.data(), m.data.size());
    return m;
}

py::array_t<std::uint8_t> array_from_mask(const BinaryMask& m) {
    py::array_t<std::uint8_t> a({static_cast<py::ssize_t>(m.h), static_cast<py::ssize_t>(m.w)});
    std::memcpy(a.mutable_data(), m.data.data(), m.data.size());
    return a;
}

CCAWeights weights_from_arrays(const py::array_t<double, py::array::c_style | py::array::forcecast>& wq,
                               const py::array_t<double, py::array::c_style | py::array::forcecast>& wk,
                               const py::array_t<double, py::array::c_style | py::array::forcecast>& wv) {
    auto as_proj = [](const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
        if (a.ndim() != 2) throw ShapeError("projection weights must be (out_channels, in_channels)");
        Tensor t({static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), 1, 1});
        std::memcpy(t.data.data(), a.data(), sizeof(double) * t.size());
        return make_node(std::move(t));
    };
    return CCAWeights{as_proj(wq), as_proj(wk), as_proj(wv)};
}

Tensor image_from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
    if (a.ndim() != 2) throw ShapeError("image array must be HxW");
    Tensor t({1, static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1))});
    std::memcpy(t.data.data(), a.data(), sizeof(double) * t.size());
    return t;
}

py::array_t<double> image_to_array(const Tensor& t) {
    py::array_t<double> a({static_cast<py::ssize_t>(t.dim(1)), static_cast<py::ssize_t>(t.dim(2))});
    std::memcpy(a.mutable_data(), t.data.data(), sizeof(double) * t.size());
    return a;
}

// Batch of HxW images (2-d array = batch of one) -> N x 1 x H x W tensor.
Tensor batch_from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
    if (a.ndim() == 2) {
        Tensor t({1, 1, static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1))});
        std::memcpy(t.data.data(), a.data(), sizeof(double) * t.size());
        return t;
    }
    if (a.ndim() == 3) {
        Tensor t({static_cast<int>(a.shape(0)), 1, static_cast<int>(a.shape(1)),
                  static_cast<int>(a.shape(2))});
        std::memcpy(t.data.data(), a.data(), sizeof(double) * t.size());
        return t;
    }
    throw ShapeError("expected an HxW image or an NxHxW batch");
}

py::dict stats_to_dict(const MetricStats& s) {
    py::dict d;
    d["mean"] = s.mean;
    d["std"] = s.stdev;
    d["n"] = s.n;
    d["n_undefined"] = s.n_undefined;
    return d;
}

struct PySegmentor {
    SegmentorParams params;
};

} // namespace

PYBIND11_MODULE(_xlsor, m) {
    m.doc() = "Criss-cross attention lung-field segmentation core";

    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const UndefinedMetricError& e) {
            PyErr_SetString(PyExc_ValueError, e.what());
        } catch (const ArgumentError& e) {
            PyErr_SetString(PyExc_ValueError, e.what());
        } catch (const ShapeError& e) {
            PyErr_SetString(PyExc_ValueError, e.what());
        } catch (const ConfigError& e) {
            PyErr_SetString(PyExc_ValueError, e.what());
        } catch (const InputError& e) {
            PyErr_SetString(PyExc_ValueError, e.what());
        } catch (const Error& e) {
            PyErr_SetString(PyExc_RuntimeError, e.what());
        }
    });

    m.def("poly_lr", &poly_lr, py::arg("initial_lr"), py::arg("iter"), py::arg("max_iter"),
          py::arg("power") = 0.9, "initial_lr * (1 - iter/max_iter)**power");

    m.def("crisscross_set", &crisscross_set, py::arg("x"), py::arg("y"), py::arg("h"),
          py::arg("w"), "The H+W-1 criss-cross coordinates of pixel (x, y) as (x, y) tuples");

    m.def(
        "attention_cost",
        [](int H, int W, int C, int Cr, const std::string& kind) {
            if (kind == "crisscross") return attention_cost(H, W, C, Cr, AttentionKind::crisscross);
            if (kind == "nonlocal") return attention_cost(H, W, C, Cr, AttentionKind::nonlocal_dense);
            throw ArgumentError("attention kind must be 'crisscross' or 'nonlocal'");
        },
        py::arg("h"), py::arg("w"), py::arg("c"), py::arg("cr"), py::arg("kind"),
        "Multiply count of affinity + aggregation for one attention pass");

    m.def(
        "make_cca_weights",
        [](int channels, std::uint64_t seed) {
            Rng rng(seed);
            CCAWeights w = CCAWeights::init(channels, rng);
            auto as2d = [](const NodePtr& n) {
                py::array_t<double> a({static_cast<py::ssize_t>(n->value.dim(0)),
                                       static_cast<py::ssize_t>(n->value.dim(1))});
                std::memcpy(a.mutable_data(), n->value.data.data(),
                            sizeof(double) * n->value.size());
                return a;
            };
            return py::make_tuple(as2d(w.query), as2d(w.key), as2d(w.value));
        },
        py::arg("channels"), py::arg("seed"),
        "Seeded (query, key, value) projection matrices for a C-channel map");

    m.def(
        "cca_forward",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& h,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& wq,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& wk,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& wv) {
            Tensor ht = tensor_from_array(h);
            if (ht.ndim() != 4) throw ShapeError("cca_forward: input must be NxCxHxW");
            CCAResult r = cca_forward(make_node(std::move(ht)), weights_from_arrays(wq, wk, wv));
            return py::make_tuple(array_from_tensor(r.output->value), array_from_tensor(r.attention));
        },
        py::arg("h"), py::arg("wq"), py::arg("wk"), py::arg("wv"),
        "One criss-cross attention pass; returns (output, attention)");

    m.def(
        "rcca_forward",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& h,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& wq,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& wk,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& wv, int passes) {
            Tensor ht = tensor_from_array(h);
            if (ht.ndim() != 4) throw ShapeError("rcca_forward: input must be NxCxHxW");
            NodePtr out =
                rcca_forward(make_node(std::move(ht)), weights_from_arrays(wq, wk, wv), passes);
            return array_from_tensor(out->value);
        },
        py::arg("h"), py::arg("wq"), py::arg("wk"), py::arg("wv"), py::arg("passes") = 2,
        "Recurrent criss-cross attention with shared weights");

    m.def(
        "nonlocal_forward",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& h,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& wq,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& wk,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& wv) {
            Tensor ht = tensor_from_array(h);
            if (ht.ndim() != 4) throw ShapeError("nonlocal_forward: input must be NxCxHxW");
            NodePtr out = nonlocal_forward(make_node(std::move(ht)), weights_from_arrays(wq, wk, wv));
            return array_from_tensor(out->value);
        },
        py::arg("h"), py::arg("wq"), py::arg("wk"), py::arg("wv"),
        "Dense attention over all HxW positions");

    m.def(
        "influence_map",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& h,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& wq,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& wk,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& wv, int x, int y,
           int passes) {
            Tensor ht = tensor_from_array(h);
            if (ht.ndim() != 4) throw ShapeError("influence_map: input must be NxCxHxW");
            CCAWeights w = weights_from_arrays(wq, wk, wv);
            BinaryMask marked = influence_map(
                [&](const Tensor& probe) {
                    return rcca_forward(make_node(probe), w, passes)->value;
                },
                ht, x, y);
            return array_from_mask(marked);
        },
        py::arg("h"), py::arg("wq"), py::arg("wk"), py::arg("wv"), py::arg("x"), py::arg("y"),
        py::arg("passes") = 1,
        "Binary HxW map of output pixels influenced by input pixel (x, y)");

    m.def(
        "generate_phantom",
        [](int H, int W, std::uint64_t seed) {
            Phantom ph = generate_phantom(H, W, seed);
            return py::make_tuple(image_to_array(ph.image), array_from_mask(ph.true_mask));
        },
        py::arg("h"), py::arg("w"), py::arg("seed"),
        "Seeded synthetic normal image; returns (image, true_mask)");

    m.def(
        "synthesize_abnormal",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& image,
           const py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>& lungs,
           const std::string& style, double intensity, std::uint64_t seed) {
            AbnormalityStyle s{style_from_name(style), intensity, seed};
            return image_to_array(apply_style(image_from_array(image), mask_from_array(lungs), s));
        },
        py::arg("image"), py::arg("lungs"), py::arg("style"), py::arg("intensity"), py::arg("seed"),
        "Apply one abnormality style; geometry is never moved");

    m.def("style_names", [] {
        std::vector<std::string> names;
        for (int i = 0; i < kStyleCount; ++i) names.push_back(style_name(static_cast<StyleKind>(i)));
        return names;
    });

    m.def(
        "binarize",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& prob,
           double threshold) {
            if (prob.ndim() != 2) throw ShapeError("binarize: probability map must be HxW");
            return array_from_mask(binarize(tensor_from_array(prob), threshold));
        },
        py::arg("prob"), py::arg("threshold") = 0.5, "Mask = 1 where prob >= threshold");

    m.def(
        "evaluate_masks",
        [](const py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>& pred,
           const py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>& gt) {
            const BinaryMask p = mask_from_array(pred), g = mask_from_array(gt);
            const ConfusionCounts c = confusion(p, g);
            py::dict d;
            d["rec"] = recall(c);
            d["pre"] = precision(c);
            d["dice"] = dice(c);
            if (p.foreground_count() > 0 && g.foreground_count() > 0)
                d["avd"] = averaged_hausdorff(p, g);
            else
                d["avd"] = py::none();
            d["vs"] = volumetric_similarity(c);
            return d;
        },
        py::arg("pred"), py::arg("gt"),
        "The five scores for one mask pair; avd is None when undefined");

    m.def(
        "averaged_hausdorff",
        [](const py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>& a,
           const py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>& b,
           double spacing) {
            return averaged_hausdorff(mask_from_array(a), mask_from_array(b), spacing);
        },
        py::arg("a"), py::arg("b"), py::arg("spacing") = 1.0);

    m.def(
        "evaluate_dataset",
        [](const std::vector<py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>>& preds,
           const std::vector<py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>>& gts) {
            std::vector<BinaryMask> p, g;
            for (const auto& a : preds) p.push_back(mask_from_array(a));
            for (const auto& a : gts) g.push_back(mask_from_array(a));
            const MetricReport r = evaluate_dataset(p, g);
            py::dict d;
            d["rec"] = stats_to_dict(r.rec);
            d["pre"] = stats_to_dict(r.pre);
            d["dice"] = stats_to_dict(r.dice);
            d["avd"] = stats_to_dict(r.avd);
            d["vs"] = stats_to_dict(r.vs);
            return d;
        },
        py::arg("preds"), py::arg("gts"),
        "Per-dataset mean/std of the five scores in the order rec, pre, dice, avd, vs");

    m.def(
        "gradcheck",
        [](int trials, std::uint64_t seed) {
            const auto checks = run_gradient_suite(trials, seed);
            py::list out;
            for (const auto& c : checks) {
                py::dict d;
                d["name"] = c.name;
                d["cases"] = c.cases;
                d["max_err"] = c.max_err;
                d["tolerance"] = c.tolerance;
                d["passed"] = c.passed;
                out.append(std::move(d));
            }
            return out;
        },
        py::arg("trials") = 20, py::arg("seed") = 1234,
        "Finite-difference check of every differentiable operation");

    py::class_<PySegmentor>(m, "Segmentor")
        .def_static(
            "build",
            [](int input_h, int input_w, int base_channels, int encoder_stride, int cca_passes,
               std::uint64_t seed) {
                SegmentorConfig cfg;
                cfg.input_h = input_h;
                cfg.input_w = input_w;
                cfg.base_channels = base_channels;
                cfg.encoder_stride = encoder_stride;
                cfg.cca_passes = cca_passes;
                cfg.seed = seed;
                return PySegmentor{build_segmentor(cfg)};
            },
            py::arg("input_h") = 64, py::arg("input_w") = 64, py::arg("base_channels") = 16,
            py::arg("encoder_stride") = 4, py::arg("cca_passes") = 2, py::arg("seed") = 0)
        .def_static("load",
                    [](const std::string& path) { return PySegmentor{load_segmentor(path)}; },
                    py::arg("path"))
        .def("save",
             [](const PySegmentor& s, const std::string& path) { save_segmentor(path, s.params); },
             py::arg("path"))
        .def(
            "predict",
            [](const PySegmentor& s,
               const py::array_t<double, py::array::c_style | py::array::forcecast>& images) {
                const bool single = images.ndim() == 2;
                Tensor probs = predict(s.params, batch_from_array(images));
                if (single) {
                    Tensor one({1, probs.dim(2), probs.dim(3)}, probs.data);
                    return image_to_array(one);
                }
                py::array_t<double> out({static_cast<py::ssize_t>(probs.dim(0)),
                                         static_cast<py::ssize_t>(probs.dim(2)),
                                         static_cast<py::ssize_t>(probs.dim(3))});
                std::memcpy(out.mutable_data(), probs.data.data(), sizeof(double) * probs.size());
                return out;
            },
            py::arg("images"), "Probability maps for an HxW image or an NxHxW batch")
        .def(
            "propagate_mask",
            [](const PySegmentor& s,
               const py::array_t<double, py::array::c_style | py::array::forcecast>& image,
               double threshold) {
                return array_from_mask(propagate_mask(s.params, image_from_array(image), threshold));
            },
            py::arg("image"), py::arg("threshold") = 0.5)
        .def_property_readonly("config", [](const PySegmentor& s) {
            py::dict d;
            d["input_h"] = s.params.cfg.input_h;
            d["input_w"] = s.params.cfg.input_w;
            d["base_channels"] = s.params.cfg.base_channels;
            d["encoder_stride"] = s.params.cfg.encoder_stride;
            d["cca_passes"] = s.params.cfg.cca_passes;
            d["seed"] = s.params.cfg.seed;
            return d;
        });

    m.def(
        "train_segmentor",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& images,
           const py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>& masks,
           int base_channels, int encoder_stride, int cca_passes, std::uint64_t model_seed,
           double initial_lr, double momentum, double weight_decay, double power, int batch_size,
           int max_iter, std::uint64_t train_seed) {
            if (images.ndim() != 3 || masks.ndim() != 3)
                throw ShapeError("train_segmentor: images and masks must be NxHxW");
            const int n = static_cast<int>(images.shape(0));
            const int H = static_cast<int>(images.shape(1));
            const int W = static_cast<int>(images.shape(2));
            std::vector<MaskPair> pairs;
            for (int i = 0; i < n; ++i) {
                MaskPair p;
                p.id = "py_" + std::to_string(i);
                p.image = Tensor({1, H, W});
                std::memcpy(p.image.data.data(), images.data() + static_cast<std::size_t>(i) * H * W,
                            sizeof(double) * p.image.size());
                p.mask = BinaryMask(H, W);
                std::memcpy(p.mask.data.data(), masks.data() + static_cast<std::size_t>(i) * H * W,
                            p.mask.data.size());
                pairs.push_back(std::move(p));
            }
            SegmentorConfig cfg;
            cfg.input_h = H;
            cfg.input_w = W;
            cfg.base_channels = base_channels;
            cfg.encoder_stride = encoder_stride;
            cfg.cca_passes = cca_passes;
            cfg.seed = model_seed;
            TrainConfig tc;
            tc.initial_lr = initial_lr;
            tc.momentum = momentum;
            tc.weight_decay = weight_decay;
            tc.power = power;
            tc.batch_size = batch_size;
            tc.max_iter = max_iter;
            tc.seed = train_seed;
            TrainResult r = train(pairs, {}, cfg, tc);
            py::list log;
            for (const auto& e : r.log) log.append(py::make_tuple(e.iter, e.lr, e.loss));
            return py::make_tuple(PySegmentor{std::move(r.params)}, log);
        },
        py::arg("images"), py::arg("masks"), py::arg("base_channels") = 16,
        py::arg("encoder_stride") = 4, py::arg("cca_passes") = 2, py::arg("model_seed") = 0,
        py::arg("initial_lr") = 0.02, py::arg("momentum") = 0.9, py::arg("weight_decay") = 0.0005,
        py::arg("power") = 0.9, py::arg("batch_size") = 4, py::arg("max_iter") = 100,
        py::arg("train_seed") = 0,
        "Train on an NxHxW stack; returns (segmentor, [(iter, lr, loss), ...])");
}
