#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "siamfc/curation.hpp"
#include "siamfc/error.hpp"
#include "siamfc/evalbench.hpp"
#include "siamfc/kernels.hpp"
#include "siamfc/model_io.hpp"
#include "siamfc/net.hpp"
#include "siamfc/parallel.hpp"
#include "siamfc/synthdata.hpp"
#include "siamfc/tracker.hpp"
#include "siamfc/training.hpp"

namespace py = pybind11;
using namespace siamfc;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

Tensor tensor_from(const FloatArray& a) {
  if (a.ndim() != 4) throw ShapeError("expected an (n, c, h, w) array, got " + std::to_string(a.ndim()) + " dims");
  const Shape s{static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), static_cast<int>(a.shape(2)),
                static_cast<int>(a.shape(3))};
  return Tensor(s, std::vector<float>(a.data(), a.data() + a.size()));
}

FloatArray array_from(const Tensor& t) {
  FloatArray out({t.n(), t.c(), t.h(), t.w()});
  std::copy(t.values().begin(), t.values().end(), out.mutable_data());
  return out;
}

// (h, w, 3) array with values in [0, 255].
Image image_from(const FloatArray& a) {
  if (a.ndim() != 3 || a.shape(2) != 3) throw ShapeError("expected an (h, w, 3) image array");
  Image img(static_cast<int>(a.shape(1)), static_cast<int>(a.shape(0)));
  std::copy(a.data(), a.data() + a.size(), img.pixels.begin());
  return img;
}

FloatArray array_from(const Image& img) {
  FloatArray out({img.height, img.width, 3});
  std::copy(img.pixels.begin(), img.pixels.end(), out.mutable_data());
  return out;
}

TrackerConfig tracker_config(int num_scales, double window_weight) {
  TrackerConfig c;
  c.num_scales = num_scales;
  c.window_weight = window_weight;
  c.validate();
  return c;
}

py::dict report_dict(const EvalReport& r) {
  py::dict d;
  d["auc"] = r.auc;
  d["mean_iou"] = r.mean_iou;
  d["accuracy"] = r.accuracy;
  d["failures"] = r.failures;
  py::list seqs;
  for (const auto& s : r.sequences) {
    py::dict e;
    e["video_id"] = s.video_id;
    e["auc"] = s.curve.auc;
    e["mean_iou"] = s.mean_iou;
    e["predictions"] = s.predictions;
    seqs.append(e);
  }
  d["sequences"] = seqs;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Fully-convolutional Siamese tracker core";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<IoError>(m, "IoError", base.ptr());
  auto format = py::register_exception<FormatError>(m, "FormatError", base.ptr());
  py::register_exception<VersionError>(m, "VersionError", format.ptr());
  py::register_exception<TruncatedError>(m, "TruncatedError", format.ptr());
  py::register_exception<ChecksumError>(m, "ChecksumError", format.ptr());
  py::register_exception<NumericError>(m, "NumericError", base.ptr());

  m.def("set_num_threads", &set_num_threads, py::arg("threads"));

  py::class_<BoundingBox>(m, "BoundingBox")
      .def(py::init<>())
      .def(py::init([](double cx, double cy, double w, double h) { return BoundingBox{cx, cy, w, h}; }),
           py::arg("cx"), py::arg("cy"), py::arg("w"), py::arg("h"))
      .def_static("from_corner", &BoundingBox::from_corner, py::arg("x"), py::arg("y"), py::arg("w"), py::arg("h"))
      .def_readwrite("cx", &BoundingBox::cx)
      .def_readwrite("cy", &BoundingBox::cy)
      .def_readwrite("w", &BoundingBox::w)
      .def_readwrite("h", &BoundingBox::h)
      .def("__repr__", [](const BoundingBox& b) {
        return "BoundingBox(cx=" + std::to_string(b.cx) + ", cy=" + std::to_string(b.cy) +
               ", w=" + std::to_string(b.w) + ", h=" + std::to_string(b.h) + ")";
      });

  m.def("xcorr", [](const FloatArray& z, const FloatArray& x) { return array_from(xcorr(tensor_from(z), tensor_from(x))); },
        py::arg("exemplar"), py::arg("search"));

  m.def("infer_shapes",
        [](const std::string& preset, int side) {
          std::vector<std::tuple<std::string, int, int, int>> out;
          for (const auto& s : build_net(preset).infer_shapes(side, side)) out.emplace_back(s.name, s.channels, s.height, s.width);
          return out;
        },
        py::arg("preset"), py::arg("side"));

  py::class_<SiameseModel>(m, "Model")
      .def(py::init([](const std::string& preset, std::uint64_t seed) {
             return SiameseModel{init_params(build_net(preset), seed), {}};
           }),
           py::arg("preset") = "tiny", py::arg("seed") = 0)
      .def_static("load", [](const std::filesystem::path& p) { return load_model(p); }, py::arg("path"))
      .def("save", [](const SiameseModel& m, const std::filesystem::path& p) { save_model(m, p); }, py::arg("path"))
      .def_property_readonly("preset", [](const SiameseModel& m) { return m.net.preset; })
      .def_property_readonly("parameter_count", [](const SiameseModel& m) { return m.net.parameter_count(); })
      .def_property_readonly("total_stride", [](const SiameseModel& m) { return m.net.total_stride(); })
      .def_property("bias", [](const SiameseModel& m) { return m.bias.b; },
                    [](SiameseModel& m, float b) { m.bias.b = b; })
      .def("embed", [](const SiameseModel& m, const FloatArray& images) { return array_from(embed(m.net, tensor_from(images))); },
           py::arg("images"), "Infer-mode embedding of (n, 3, h, w) images scaled to [0, 1].")
      .def("score",
           [](const SiameseModel& m, const FloatArray& z, const FloatArray& x) {
             return array_from(score(m.net, m.bias, tensor_from(z), tensor_from(x)));
           },
           py::arg("exemplar"), py::arg("search"));

  m.def("crop_scale", [](double w, double h) { return crop_scale(BoundingBox{0, 0, w, h}); }, py::arg("w"), py::arg("h"));
  m.def("extract_crop",
        [](const FloatArray& image, double cx, double cy, double side, int out_side) {
          CropStats st;
          const Image crop = extract_crop(image_from(image), cx, cy, side, out_side, &st);
          return py::make_tuple(array_from(crop), st.fill_fraction());
        },
        py::arg("image"), py::arg("cx"), py::arg("cy"), py::arg("side"), py::arg("out_side"),
        "Returns the crop and the fraction of samples filled with the mean colour.");

  m.def("logistic_loss", &logistic_loss, py::arg("v"), py::arg("y"));
  m.def("label_map",
        [](int height, int width, int stride, double radius) {
          const LabelMap lm = make_label_map(height, width, stride, radius);
          FloatArray labels({height, width}), weights({height, width});
          std::copy(lm.labels.begin(), lm.labels.end(), labels.mutable_data());
          std::copy(lm.weights.begin(), lm.weights.end(), weights.mutable_data());
          return py::make_tuple(labels, weights);
        },
        py::arg("height") = 17, py::arg("width") = 17, py::arg("stride") = 8, py::arg("radius") = 16.0);
  m.def("map_loss",
        [](const FloatArray& scores, int stride, double radius) {
          if (scores.ndim() != 2) throw ShapeError("expected a 2-d score map");
          const LabelMap lm = make_label_map(static_cast<int>(scores.shape(0)), static_cast<int>(scores.shape(1)), stride, radius);
          return map_loss(std::span<const float>(scores.data(), scores.size()), lm);
        },
        py::arg("scores"), py::arg("stride") = 8, py::arg("radius") = 16.0);

  m.def("iou", &iou, py::arg("a"), py::arg("b"));
  m.def("ope_auc",
        [](const std::vector<BoundingBox>& predictions, const std::vector<BoundingBox>& truth) {
          return ope(predictions, truth).auc;
        },
        py::arg("predictions"), py::arg("ground_truth"));

  m.def("track",
        [](const SiameseModel& model, const std::vector<FloatArray>& frames, const BoundingBox& init, int num_scales,
           double window_weight) {
          std::vector<Image> images;
          images.reserve(frames.size());
          for (const auto& f : frames) images.push_back(image_from(f));
          py::gil_scoped_release release;
          return track(model, images, init, tracker_config(num_scales, window_weight));
        },
        py::arg("model"), py::arg("frames"), py::arg("init_box"), py::arg("num_scales") = 5,
        py::arg("window_weight") = 0.176);

  m.def("synth_sequence",
        [](std::uint64_t seed, int frames, int canvas, double velocity_x, double velocity_y, double clutter) {
          SynthConfig c;
          c.seed = seed;
          c.frames = frames;
          c.canvas = canvas;
          c.velocity_x = velocity_x;
          c.velocity_y = velocity_y;
          c.clutter = clutter;
          c.min_size = std::min(c.min_size, canvas / 4);
          c.max_size = std::min(c.max_size, canvas / 3);
          c.validate();
          const SynthSequence s = gen_sequence(c);
          std::vector<FloatArray> images;
          for (const auto& f : s.frames) images.push_back(array_from(f));
          return py::make_tuple(images, s.annotation.track_of(0));
        },
        py::arg("seed") = 0, py::arg("frames") = 30, py::arg("canvas") = 256, py::arg("velocity_x") = 3.0,
        py::arg("velocity_y") = 2.0, py::arg("clutter") = 1.0,
        "Renders one synthetic sequence; returns (frames, ground-truth boxes).");

  m.def("synth_dataset",
        [](const std::filesystem::path& out, int count, std::uint64_t seed, bool test, int frames, int canvas) {
          SynthConfig c;
          c.frames = frames;
          c.canvas = canvas;
          c.min_size = std::min(c.min_size, canvas / 4);
          c.max_size = std::min(c.max_size, canvas / 3);
          py::gil_scoped_release release;
          return gen_dataset(count, c, seed, test ? Split::Test : Split::Train, out).size();
        },
        py::arg("out_dir"), py::arg("count"), py::arg("seed") = 0, py::arg("test") = false, py::arg("frames") = 30,
        py::arg("canvas") = 256);

  m.def("curate",
        [](const std::filesystem::path& data, const std::filesystem::path& out) {
          py::gil_scoped_release release;
          return curate(load_manifest(data), out).frame_count();
        },
        py::arg("data_dir"), py::arg("out_dir"), "Curates a synthetic dataset; returns the number of frames.");

  m.def("train",
        [](const std::filesystem::path& curated, const std::string& preset, int epochs, int pairs_per_epoch, int batch,
           double lr_start, double lr_end, std::uint64_t seed, std::optional<std::filesystem::path> out) {
          TrainConfig c;
          c.preset = preset;
          c.epochs = epochs;
          c.pairs_per_epoch = pairs_per_epoch;
          c.batch = batch;
          c.lr_start = lr_start;
          c.lr_end = lr_end;
          c.seed = seed;
          TrainOptions opts;
          opts.out_dir = out;
          py::gil_scoped_release release;
          TrainResult r = train(load_curated(curated), c, opts);
          std::vector<double> losses;
          for (const auto& e : r.log) losses.push_back(e.mean_loss);
          return std::make_pair(std::move(r.model), losses);
        },
        py::arg("curated_dir"), py::arg("preset") = "tiny", py::arg("epochs") = 1, py::arg("pairs_per_epoch") = 100,
        py::arg("batch") = 8, py::arg("lr_start") = 1e-2, py::arg("lr_end") = 1e-3, py::arg("seed") = 0,
        py::arg("out_dir") = py::none(), "Returns (model, per-epoch mean losses).");

  m.def("evaluate",
        [](const SiameseModel& model, const std::filesystem::path& data, bool vot) {
          std::vector<EvalSequence> seqs;
          for (const auto& a : load_manifest(data)) seqs.push_back(EvalSequence::from_annotation(a));
          EvalOptions o;
          o.run_vot = vot;
          EvalReport r;
          {
            py::gil_scoped_release release;
            r = evaluate(model, seqs, o);
          }
          return report_dict(r);
        },
        py::arg("model"), py::arg("data_dir"), py::arg("vot") = true);
}
