#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "tcwae/core_math.hpp"
#include "tcwae/datasets.hpp"
#include "tcwae/estimators.hpp"
#include "tcwae/experiment.hpp"
#include "tcwae/metrics.hpp"

namespace py = pybind11;
using namespace tcwae;

namespace {

FactorSpec make_spec(const std::vector<std::string>& names, const std::vector<std::size_t>& cards) {
  FactorSpec spec{names, cards};
  spec.validate();
  return spec;
}

py::dict scores_dict(const ScoreReport& s) {
  py::dict d;
  d["mse"] = s.mse;
  d["mig"] = s.mig;
  d["factor_vae"] = s.factor_vae;
  d["sap"] = s.sap;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Core routines of the tcwae library";
  m.attr("__version__") = TCWAE_VERSION;

  m.def(
      "generate_sprites",
      [](const std::vector<std::string>& names, const std::vector<std::size_t>& cards,
         std::size_t resolution, std::uint64_t seed) {
        const FactorDataset ds = generate_sprites(make_spec(names, cards), resolution, seed);
        const auto& shape = ds.images.shape();
        py::array_t<double> images(std::vector<py::ssize_t>(shape.begin(), shape.end()));
        std::copy(ds.images.data().begin(), ds.images.data().end(), images.mutable_data());
        return py::make_tuple(images, FactorMatrix(ds.factors));
      },
      py::arg("names"), py::arg("cardinalities"), py::arg("resolution") = 64, py::arg("seed") = 0,
      "Renders one sprite per factor tuple; returns (images [M, H, W, C], factors [M, K]).");

  m.def(
      "mws_terms",
      [](const Matrix& codes, const Matrix& means, const Matrix& log_vars, std::size_t dataset_size) {
        const LatentBatch batch(codes, means, log_vars);
        const MwsMeans mm = mws_means(batch, dataset_size, DiagonalGaussian::standard(batch.dim()));
        py::dict d;
        d["index_code_mi"] = mm.index_code_mi();
        d["tc"] = mm.tc();
        d["dimwise_kl"] = mm.dimwise_kl();
        d["log_qz"] = mm.log_qz;
        d["log_prior"] = mm.log_prior;
        return d;
      },
      py::arg("codes"), py::arg("means"), py::arg("log_vars"), py::arg("dataset_size"),
      "Minibatch-weighted-sampling estimates of the KL decomposition under a standard normal prior.");

  m.def(
      "mws_log_qz",
      [](const Matrix& codes, const Matrix& means, const Matrix& log_vars, std::size_t dataset_size) {
        return Vector(mws_log_qz(LatentBatch(codes, means, log_vars), dataset_size));
      },
      py::arg("codes"), py::arg("means"), py::arg("log_vars"), py::arg("dataset_size"));

  m.def(
      "mmd_unbiased",
      [](const Matrix& x, const Matrix& y) {
        return mmd_unbiased(x, y, KernelConfig::for_latent_dim(static_cast<std::size_t>(x.cols())));
      },
      py::arg("x"), py::arg("y"), "Unbiased IMQ-kernel MMD^2 between the rows of x and y.");

  m.def(
      "density_ratio_kl", [](const Matrix& logits) { return density_ratio_kl(logits); },
      py::arg("logits"), "Mean of logit0 - logit1: the density-ratio KL estimate.");

  m.def(
      "mig",
      [](const Matrix& latents, const FactorMatrix& factors, const std::vector<std::size_t>& cards,
         std::size_t bins) {
        std::vector<std::string> names;
        for (std::size_t k = 0; k < cards.size(); ++k) names.push_back("f" + std::to_string(k));
        return mig(RepresentationTable{latents, factors, make_spec(names, cards)}, bins);
      },
      py::arg("latents"), py::arg("factors"), py::arg("cardinalities"), py::arg("bins") = 20);

  m.def(
      "sap_score",
      [](const Matrix& latents, const FactorMatrix& factors, const std::vector<std::size_t>& cards) {
        std::vector<std::string> names;
        for (std::size_t k = 0; k < cards.size(); ++k) names.push_back("f" + std::to_string(k));
        return sap_score(RepresentationTable{latents, factors, make_spec(names, cards)});
      },
      py::arg("latents"), py::arg("factors"), py::arg("cardinalities"));

  m.def(
      "train",
      [](const std::filesystem::path& config, bool resume) {
        RunOptions opts;
        opts.resume = resume;
        py::gil_scoped_release release;
        return cmd_train(config, opts);
      },
      py::arg("config"), py::arg("resume") = false, "Trains every seed of a config; returns run directories.");

  m.def(
      "evaluate",
      [](const std::filesystem::path& run_dir) {
        EvalResult r;
        {
          py::gil_scoped_release release;
          r = evaluate_run(run_dir);
        }
        return scores_dict(r.scores);
      },
      py::arg("run_dir"), "Scores a trained run without writing to it.");

  m.def(
      "gradcheck",
      [](const std::filesystem::path& out_dir) {
        GradcheckSummary s;
        {
          py::gil_scoped_release release;
          s = cmd_gradcheck(out_dir);
        }
        return py::make_tuple(s.passed, s.report);
      },
      py::arg("out_dir"), "Finite-difference check of every objective; returns (passed, report path).");

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
}
