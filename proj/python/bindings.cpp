#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "cadet/cadet.hpp"
#include "cadet/contrastive.hpp"
#include "cadet/embeddings_io.hpp"
#include "cadet/errors.hpp"
#include "cadet/metrics.hpp"
#include "cadet/mmd.hpp"
#include "cadet/synthetic.hpp"
#include "cadet/version.hpp"

namespace py = pybind11;
using namespace cadet;

namespace {

EmbeddingSet as_set(const MatrixF& m) { return EmbeddingSet(m); }

FileFormat format_for(const std::filesystem::path& path, const std::string& format) {
    return format.empty() ? format_from_extension(path) : parse_format(format);
}

detector::TransformBank as_bank(const MatrixF& views, std::size_t n_trs) {
    return detector::TransformBank(as_set(views), n_trs, "{}", 0);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "MMD two-sample tests and CADet anomaly detection on embeddings.";
    m.attr("__version__") = kToolkitVersion;

    auto base = py::register_exception<Error>(m, "CadetError");
    py::register_exception<FormatError>(m, "FormatError", base.ptr());
    py::register_exception<ValidationError>(m, "ValidationError", base.ptr());
    py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
    py::register_exception<DegenerateInputError>(m, "DegenerateInputError", base.ptr());
    py::register_exception<InsufficientSamplesError>(m, "InsufficientSamplesError", base.ptr());
    py::register_exception<IoError>(m, "IoError", base.ptr());
    py::register_exception<DegenerateCalibrationError>(m, "DegenerateCalibrationError", base.ptr());
    py::register_exception<TrainingFailure>(m, "TrainingFailure", base.ptr());
    py::register_exception<ConfigError>(m, "ConfigError", base.ptr());

    // Embedding files.
    m.def(
        "load_embeddings",
        [](const std::filesystem::path& path, const std::string& format) {
            return load_embeddings(path, format_for(path, format)).data();
        },
        py::arg("path"), py::arg("format") = "", "Rows of an EMB1 (.emb/.bin) or CSV file as float32 (count, dim).");
    m.def(
        "save_embeddings",
        [](const MatrixF& data, const std::filesystem::path& path, const std::string& format) {
            save_embeddings(as_set(data), path, format_for(path, format));
        },
        py::arg("data"), py::arg("path"), py::arg("format") = "",
        "Validates (finite, non-empty) and writes rows, rounded to float32.");
    m.def("load_labels", &load_labels, py::arg("path"));
    m.def("save_labels", &save_labels, py::arg("labels"), py::arg("path"));

    // MMD.
    py::class_<mmd::TwoSampleResult>(m, "TwoSampleResult")
        .def_readonly("est", &mmd::TwoSampleResult::est)
        .def_readonly("p_value", &mmd::TwoSampleResult::p_value)
        .def_readonly("perm_estimates", &mmd::TwoSampleResult::perm_estimates)
        .def_readonly("n", &mmd::TwoSampleResult::n)
        .def_readonly("seed", &mmd::TwoSampleResult::seed);
    m.def(
        "mmd2_unbiased", [](const MatrixF& p, const MatrixF& q) { return mmd::mmd2_unbiased(as_set(p), as_set(q)); },
        py::arg("p"), py::arg("q"), "Unbiased MMD^2 estimate under the cosine kernel.");
    m.def(
        "permutation_test",
        [](const MatrixF& p, const MatrixF& q, std::size_t n_perm, std::uint64_t seed) {
            return mmd::permutation_test(as_set(p), as_set(q), n_perm, seed);
        },
        py::arg("p"), py::arg("q"), py::arg("n_perm") = 500, py::arg("seed"));
    m.def(
        "mmd_cc_test",
        [](const MatrixF& p1, const MatrixF& p2, const MatrixF& q, std::size_t n_perm, std::uint64_t seed) {
            return mmd::mmd_cc_test(as_set(p1), as_set(p2), as_set(q), n_perm, seed);
        },
        py::arg("p1"), py::arg("p2"), py::arg("q"), py::arg("n_perm") = 500, py::arg("seed"));

    // CADet on pre-embedded banks: n_trs consecutive rows per sample.
    py::class_<detector::CadetCalibration>(m, "Calibration")
        .def_readonly("gamma", &detector::CadetCalibration::gamma)
        .def_readonly("val_scores", &detector::CadetCalibration::val_scores)
        .def_readonly("n_trs", &detector::CadetCalibration::n_trs)
        .def("save", [](const detector::CadetCalibration& c, const std::filesystem::path& p) {
            detector::save_calibration(c, p);
        });
    m.def("load_calibration", &detector::load_calibration, py::arg("path"));
    m.def(
        "calibrate_from_banks",
        [](const MatrixF& bank1, const MatrixF& bank2, std::size_t n_trs, const std::string& intra_norm) {
            return detector::calibrate_from_banks(as_bank(bank1, n_trs), as_bank(bank2, n_trs),
                                                  detector::parse_intra_norm(intra_norm));
        },
        py::arg("bank1"), py::arg("bank2"), py::arg("n_trs"), py::arg("intra_norm") = "pair_count");
    m.def(
        "test_bank",
        [](const MatrixF& views, const detector::CadetCalibration& calib) {
            const auto rs = detector::test_bank(as_bank(views, calib.n_trs), calib);
            std::vector<double> m_in, m_out, score, p;
            for (const auto& r : rs) {
                m_in.push_back(r.parts.m_in);
                m_out.push_back(r.parts.m_out);
                score.push_back(r.parts.score);
                p.push_back(r.p_value);
            }
            return py::dict(py::arg("m_in") = m_in, py::arg("m_out") = m_out, py::arg("score") = score,
                            py::arg("p_value") = p);
        },
        py::arg("views"), py::arg("calib"), "Scores every sample of a bank; returns per-sample arrays.");

    m.def(
        "auroc",
        [](const std::vector<double>& neg, const std::vector<double>& pos, const std::string& direction) {
            return metrics::auroc(neg, pos, metrics::parse_direction(direction)).auroc;
        },
        py::arg("negative"), py::arg("positive"), py::arg("direction") = "higher");

    // Synthetic data and the toy model.
    m.def(
        "generate_synthetic",
        [](std::size_t n, std::size_t n_clusters, std::size_t dim, double separation, double sigma,
           std::uint64_t seed, double center_offset, std::size_t intrinsic_dim, double ambient_sigma,
           std::uint64_t stream, double shift) {
            const synthetic::SyntheticSpec spec{n_clusters, dim,           separation,   sigma, seed,
                                                center_offset, intrinsic_dim, ambient_sigma};
            auto d = synthetic::generate_shifted(spec, n, shift, stream);
            return py::make_tuple(d.x, d.labels);
        },
        py::arg("n"), py::arg("n_clusters") = 1, py::arg("dim") = 16, py::arg("separation") = 10.0,
        py::arg("sigma") = 1.0, py::arg("seed") = 0, py::arg("center_offset") = 0.0, py::arg("intrinsic_dim") = 0,
        py::arg("ambient_sigma") = 0.0, py::arg("stream") = 0, py::arg("shift") = 0.0,
        "Draws (x, labels) from the synthetic Gaussian mixture, optionally mean-shifted by `shift` sigmas.");

    py::class_<contrastive::ContrastiveModel>(m, "ContrastiveModel")
        .def("features",
             [](const contrastive::ContrastiveModel& model, const Matrix& x) {
                 return contrastive::forward_batch(model, x, false);
             })
        .def("save", [](const contrastive::ContrastiveModel& model,
                        const std::filesystem::path& p) { contrastive::save_model(model, p); })
        .def_property_readonly("parameter_count", &contrastive::ContrastiveModel::parameter_count);
    m.def("load_model", &contrastive::load_model, py::arg("path"));
    m.def(
        "train_toy",
        [](const Matrix& x, std::uint64_t seed, std::size_t epochs, double lr, std::size_t batch_size, double tau) {
            contrastive::TrainConfig c;
            c.seed = seed;
            c.epochs = epochs;
            c.learning_rate = lr;
            c.batch_size = batch_size;
            c.tau = tau;
            c.augmentation = {0.0, 0.5, 1.5, 0.5, 0.0};
            auto r = contrastive::train(x, c);
            return py::make_tuple(std::move(r.model), r.epoch_loss);
        },
        py::arg("x"), py::arg("seed"), py::arg("epochs") = 60, py::arg("lr") = 0.05, py::arg("batch_size") = 128,
        py::arg("tau") = 0.1, "Trains the toy contrastive model; returns (model, per-epoch loss).");
}
