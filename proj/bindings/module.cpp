#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "deptest/harness.hpp"

namespace py = pybind11;
using namespace deptest;

namespace {

numkit::Matrix to_matrix(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 2) throw std::invalid_argument("expected a 2-d array");
  numkit::Matrix m(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
  std::memcpy(m.data(), a.data(), sizeof(double) * m.size());
  return m;
}

py::array_t<double> to_array(const numkit::Matrix& m) {
  py::array_t<double> a({m.rows(), m.cols()});
  std::memcpy(a.mutable_data(), m.data(), sizeof(double) * m.size());
  return a;
}

datasets::PairedSample to_sample(const py::array_t<double, py::array::c_style | py::array::forcecast>& x,
                                 const py::array_t<double, py::array::c_style | py::array::forcecast>& y) {
  datasets::PairedSample s;
  s.x = to_matrix(x);
  s.y = to_matrix(y);
  if (s.x.rows() != s.y.rows()) throw std::invalid_argument("x and y need equal row counts");
  return s;
}

py::dict result_dict(const testing::TestResult& r) {
  py::dict d;
  d["statistic"] = r.statistic;
  d["p_value"] = r.p_value;
  d["reject"] = r.reject;
  d["alpha"] = r.alpha;
  d["perm_values"] = py::cast(r.perm_values);
  return d;
}

testing::RunConfig run_config_from_kwargs(const std::string& method, double alpha, int n_perm,
                                          int epochs, double lr, int batch_size, double lambda,
                                          std::uint64_t seed, double train_frac, double val_frac,
                                          double test_frac) {
  testing::RunConfig cfg;
  cfg.method = testing::method_from_string(method);
  cfg.alpha = alpha;
  cfg.n_perm = n_perm;
  cfg.epochs = epochs;
  cfg.lr = lr;
  cfg.batch_size = batch_size;
  cfg.lambda = lambda;
  cfg.seed = seed;
  cfg.split = {train_frac, val_frac, test_frac, seed};
  return cfg;
}

}  // namespace

PYBIND11_MODULE(_deptest, m) {
  m.doc() = "Learned kernel/critic independence tests with exact permutation validity";

  // distributions
  m.def("normal_cdf", &numkit::normal_cdf, py::arg("x"));
  m.def("normal_quantile", &numkit::normal_quantile, py::arg("p"));
  m.def("gamma_cdf", &numkit::gamma_cdf, py::arg("x"), py::arg("shape"), py::arg("scale"));
  m.def("gamma_pdf", &numkit::gamma_pdf, py::arg("x"), py::arg("shape"), py::arg("scale"));
  m.def("gamma_quantile", &numkit::gamma_quantile, py::arg("p"), py::arg("shape"), py::arg("scale"));
  m.def("median_pairwise_sqdist",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& pts) {
          return numkit::median_pairwise_sqdist(to_matrix(pts));
        },
        py::arg("points"));

  // datasets
  m.def("sample_hdgm",
        [](int d, int n, std::uint64_t seed) {
          numkit::Rng rng(seed);
          const auto s = datasets::sample_hdgm(d, n, rng);
          return py::make_tuple(to_array(s.x), to_array(s.y));
        },
        py::arg("d"), py::arg("n"), py::arg("seed") = 0);
  m.def("sample_sinusoid",
        [](int freq, int n, std::uint64_t seed) {
          numkit::Rng rng(seed);
          const auto s = datasets::sample_sinusoid(freq, n, rng);
          return py::make_tuple(to_array(s.x), to_array(s.y));
        },
        py::arg("freq"), py::arg("n"), py::arg("seed") = 0);
  m.def("shuffle_to_null",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& x,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& y,
           std::uint64_t seed) {
          numkit::Rng rng(seed);
          const auto s = datasets::shuffle_to_null(to_sample(x, y), rng);
          return py::make_tuple(to_array(s.x), to_array(s.y));
        },
        py::arg("x"), py::arg("y"), py::arg("seed") = 0);

  // kernels
  m.def("gaussian_gram",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& pts,
           double bandwidth) {
          return to_array(kernels::GaussianKernel(bandwidth).gram(to_matrix(pts)));
        },
        py::arg("points"), py::arg("bandwidth"));
  m.def("median_heuristic_bandwidth",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& pts) {
          return kernels::median_heuristic_kernel(to_matrix(pts)).bandwidth();
        },
        py::arg("points"));

  // estimators over gram matrices
  auto pair_of = [](const py::array_t<double, py::array::c_style | py::array::forcecast>& k,
                    const py::array_t<double, py::array::c_style | py::array::forcecast>& l) {
    return kernels::gram_pair_from(to_matrix(k), to_matrix(l));
  };
  m.def("hsic_biased",
        [pair_of](const py::array_t<double, py::array::c_style | py::array::forcecast>& k,
                  const py::array_t<double, py::array::c_style | py::array::forcecast>& l) {
          return estimators::hsic_biased(pair_of(k, l)).value;
        },
        py::arg("k"), py::arg("l"));
  m.def("hsic_unbiased",
        [pair_of](const py::array_t<double, py::array::c_style | py::array::forcecast>& k,
                  const py::array_t<double, py::array::c_style | py::array::forcecast>& l) {
          return estimators::hsic_unbiased(pair_of(k, l)).value;
        },
        py::arg("k"), py::arg("l"));
  m.def("hsic_variance",
        [pair_of](const py::array_t<double, py::array::c_style | py::array::forcecast>& k,
                  const py::array_t<double, py::array::c_style | py::array::forcecast>& l,
                  double lam) {
          const auto v = estimators::hsic_variance(pair_of(k, l), lam);
          return py::make_tuple(v.sigma2, v.r_term);
        },
        py::arg("k"), py::arg("l"), py::arg("lam") = 1e-8);
  m.def("mmd2_biased_perm",
        [pair_of](const py::array_t<double, py::array::c_style | py::array::forcecast>& k,
                  const py::array_t<double, py::array::c_style | py::array::forcecast>& l,
                  const std::vector<std::vector<int>>& perms) {
          return estimators::mmd2_biased_perm(pair_of(k, l), perms).value;
        },
        py::arg("k"), py::arg("l"), py::arg("perms"));
  m.def("gamma_threshold",
        [pair_of](const py::array_t<double, py::array::c_style | py::array::forcecast>& k,
                  const py::array_t<double, py::array::c_style | py::array::forcecast>& l,
                  double alpha, std::uint64_t seed, int n_perm) {
          numkit::Rng rng(seed);
          const auto t = objectives::gamma_threshold(pair_of(k, l), alpha, rng, n_perm);
          return py::make_tuple(t.threshold, t.shape, t.scale);
        },
        py::arg("k"), py::arg("l"), py::arg("alpha") = 0.05, py::arg("seed") = 0,
        py::arg("n_perm") = 20);

  // critic-grid statistics
  m.def("nds_stat",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& fgrid) {
          return estimators::nds_stat(to_matrix(fgrid)).value;
        },
        py::arg("fgrid"));
  m.def("t0_vstat",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& fgrid) {
          return estimators::t0_vstat(to_matrix(fgrid)).value;
        },
        py::arg("fgrid"));
  m.def("infonce",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& fgrid) {
          return estimators::infonce(to_matrix(fgrid)).value;
        },
        py::arg("fgrid"));
  m.def("nwj",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& fgrid) {
          return estimators::nwj(to_matrix(fgrid)).value;
        },
        py::arg("fgrid"));

  // power formulas
  m.def("asymptotic_power_nds", &harness::asymptotic_power_nds, py::arg("t1"), py::arg("t0"),
        py::arg("tau1"), py::arg("tau0"), py::arg("m"), py::arg("alpha"));
  m.def("asymptotic_power_hsic", &harness::asymptotic_power_hsic, py::arg("hsic"),
        py::arg("sigma1"), py::arg("psi_quantile"), py::arg("m"));

  // tests
  m.def("hsic_median_test",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& x,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& y, int n_perm,
           double alpha, std::uint64_t seed) {
          auto stat = testing::HsicStat::median_heuristic(testing::HsicStat::Estimator::Unbiased);
          numkit::Rng rng(seed, 3);
          return result_dict(testing::permutation_test(stat, to_sample(x, y), n_perm, alpha, rng));
        },
        py::arg("x"), py::arg("y"), py::arg("n_perm") = 500, py::arg("alpha") = 0.05,
        py::arg("seed") = 0);
  m.def("run_algorithm1",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& x,
            const py::array_t<double, py::array::c_style | py::array::forcecast>& y,
            const std::string& method, double alpha, int n_perm, int epochs, double lr,
            int batch_size, double lambda, std::uint64_t seed, double train_frac, double val_frac,
            double test_frac, const std::string& checkpoint_out) {
          testing::RunConfig cfg = run_config_from_kwargs(method, alpha, n_perm, epochs, lr,
                                                          batch_size, lambda, seed, train_frac,
                                                          val_frac, test_frac);
          cfg.checkpoint_out = checkpoint_out;
          const auto out = testing::run_algorithm1(cfg, to_sample(x, y));
          py::dict d = result_dict(out.result);
          d["method"] = method;
          d["diverged"] = out.training.diverged;
          d["epochs_run"] = out.training.epochs_run;
          return d;
        },
        py::arg("x"), py::arg("y"), py::arg("method"), py::arg("alpha") = 0.05,
        py::arg("n_perm") = 500, py::arg("epochs") = 200, py::arg("lr") = 1e-4,
        py::arg("batch_size") = 128, py::arg("lambda") = 1e-8, py::arg("seed") = 0,
        py::arg("train_frac") = 0.7, py::arg("val_frac") = 0.2, py::arg("test_frac") = 0.1,
        py::arg("checkpoint_out") = std::string());
}
