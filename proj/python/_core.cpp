#include <sstream>
#include <string>
#include <vector>

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "availnet/container.hpp"
#include "availnet/error.hpp"
#include "availnet/geo_cluster.hpp"
#include "availnet/optim.hpp"
#include "availnet/series_gaf.hpp"
#include "cli.hpp"

namespace py = pybind11;
using namespace availnet;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Array to_numpy(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    Array out(shape);
    std::copy(t.values().begin(), t.values().end(), out.mutable_data());
    return out;
}

Array to_numpy(const std::vector<double>& v) {
    Array out(std::vector<py::ssize_t>{static_cast<py::ssize_t>(v.size())});
    std::copy(v.begin(), v.end(), out.mutable_data());
    return out;
}

std::vector<double> to_vector(const Array& a) {
    if (a.ndim() != 1) throw ShapeError("expected a 1-d array, got " + std::to_string(a.ndim()) + " dimensions");
    return {a.data(), a.data() + a.size()};
}

std::vector<GeoPoint> to_points(const Array& a) {
    if (a.ndim() != 2 || a.shape(1) != 2) throw ShapeError("points must be an array of shape (n, 2) of lat, lon");
    std::vector<GeoPoint> out;
    for (py::ssize_t i = 0; i < a.shape(0); ++i) out.push_back(GeoPoint::make(a.at(i, 0), a.at(i, 1)));
    return out;
}

Array points_array(const std::vector<GeoPoint>& points) {
    Array out({static_cast<py::ssize_t>(points.size()), py::ssize_t{2}});
    for (std::size_t i = 0; i < points.size(); ++i) {
        out.mutable_at(i, 0) = points[i].lat;
        out.mutable_at(i, 1) = points[i].lon;
    }
    return out;
}

GadfForm parse_form(const std::string& form) {
    if (form == "difference") return GadfForm::difference;
    if (form == "sum") return GadfForm::sum;
    throw ValidationError("GADF form must be 'difference' or 'sum', got '" + form + "'");
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Native core of availnet: geo clustering, Gramian angular fields, model containers and the CLI.";

    auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
    py::register_exception<ValidationError>(m, "ValidationError", base.ptr());
    py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
    py::register_exception<DataError>(m, "DataError", base.ptr());
    py::register_exception<IoError>(m, "IoError", base.ptr());
    py::register_exception<CorruptionError>(m, "CorruptionError", base.ptr());
    py::register_exception<UnsupportedVersionError>(m, "UnsupportedVersionError", base.ptr());
    py::register_exception<ArtifactTypeError>(m, "ArtifactTypeError", base.ptr());
    py::register_exception<ConfigError>(m, "ConfigError", base.ptr());

    m.attr("EARTH_RADIUS_KM") = kEarthRadiusKm;

    m.def(
        "haversine",
        [](double lat1, double lon1, double lat2, double lon2, double radius_km) {
            return haversine({lat1, lon1}, {lat2, lon2}, radius_km);
        },
        py::arg("lat1"), py::arg("lon1"), py::arg("lat2"), py::arg("lon2"), py::arg("radius_km") = kEarthRadiusKm,
        "Great-circle distance in km between two points given in degrees.");

    m.def(
        "kmeans_haversine",
        [](const Array& points, std::size_t k, std::uint64_t seed, std::size_t restarts, std::size_t max_iter) {
            KMeansOptions opt;
            opt.restarts = restarts;
            opt.max_iter = max_iter;
            const auto pts = to_points(points);
            KMeansResult r;
            {
                py::gil_scoped_release release;
                r = kmeans_haversine(pts, k, seed, opt);
            }
            py::dict out;
            out["centroids"] = points_array(r.model.centroids());
            out["assignments"] = r.assignments;
            out["cost_history"] = r.cost_history;
            out["cost"] = r.cost;
            out["iterations"] = r.iterations;
            return out;
        },
        py::arg("points"), py::arg("k"), py::arg("seed") = 0, py::arg("restarts") = 5, py::arg("max_iter") = 100,
        "k-means under the haversine distance on an (n, 2) array of lat, lon.");

    m.def(
        "gap_statistic",
        [](const Array& points, std::vector<std::size_t> k_values, std::uint64_t seed, std::size_t references) {
            GapStatOptions opt;
            opt.references = references;
            const auto pts = to_points(points);
            GapStatResult r;
            {
                py::gil_scoped_release release;
                r = gap_statistic(pts, k_values, seed, opt);
            }
            py::dict out;
            out["chosen_k"] = r.chosen_k;
            out["k_values"] = r.k_values;
            out["gap"] = r.gap;
            out["log_wk"] = r.log_wk;
            out["ref_log_wk_mean"] = r.ref_log_wk_mean;
            out["ref_log_wk_sd"] = r.ref_log_wk_sd;
            return out;
        },
        py::arg("points"), py::arg("k_values"), py::arg("seed") = 0, py::arg("references") = 10,
        "Gap statistic over the given candidate cluster counts.");

    m.def("paa", [](const Array& w, std::size_t m) { return to_numpy(paa(to_vector(w), m)); }, py::arg("window"),
          py::arg("m"), "Piecewise aggregate approximation to m segments.");
    m.def("rescale_to_unit", [](const Array& w) { return to_numpy(rescale_to_unit(to_vector(w))); },
          py::arg("window"), "Min-max rescale into [-1, 1]; constant windows map to zeros.");
    m.def(
        "perturb_zero_series",
        [](const Array& w, double eps) { return to_numpy(perturb_zero_series(to_vector(w), eps)); },
        py::arg("window"), py::arg("epsilon") = kZeroSeriesEpsilon, "Replace an all-zero window by epsilon.");
    m.def("gasf", [](const Array& w) { return to_numpy(gasf(to_vector(w))); }, py::arg("window"),
          "Gramian angular summation field of a window already in [-1, 1].");
    m.def(
        "gadf", [](const Array& w, const std::string& form) { return to_numpy(gadf(to_vector(w), parse_form(form))); },
        py::arg("window"), py::arg("form") = "difference", "Gramian angular difference field.");
    m.def(
        "encode_gaf_pair",
        [](const Array& w, double epsilon, std::size_t paa_size, const std::string& form) {
            GafOptions opt;
            opt.epsilon = epsilon;
            opt.paa_size = paa_size;
            opt.gadf_form = parse_form(form);
            const auto pair = encode_gaf_pair(to_vector(w), opt);
            return py::make_tuple(to_numpy(pair.gasf), to_numpy(pair.gadf));
        },
        py::arg("window"), py::arg("epsilon") = kZeroSeriesEpsilon, py::arg("paa_size") = 0,
        py::arg("form") = "difference", "Perturb, optionally PAA, rescale, then return (gasf, gadf).");

    m.def(
        "encode_label",
        [](const std::vector<std::uint8_t>& bits) { return make_label(bits).class_index; }, py::arg("bits"),
        "Class index of future presence bits l_1..l_gamma (l_1 is the least significant).");
    m.def(
        "decode_label", [](std::size_t c, std::size_t gamma) { return decode_label(c, gamma).bits; },
        py::arg("class_index"), py::arg("gamma"), "Presence bits of a class index.");

    m.def(
        "scheduler_rate",
        [](std::size_t epoch, double alpha0, double delta, std::size_t drop) {
            return scheduler_rate(SchedulerConfig{alpha0, delta, drop}, epoch);
        },
        py::arg("epoch"), py::arg("alpha0") = 0.1, py::arg("delta") = 0.5, py::arg("drop") = 10,
        "Step learning rate alpha0 * delta^floor(epoch / drop).");

    m.def(
        "load_container",
        [](const std::string& path) {
            const auto c = load_container(path);
            py::dict tensors;
            for (const auto& [name, t] : c.tensors) tensors[py::str(name)] = to_numpy(t);
            py::dict out;
            out["type"] = artifact_name(c.type);
            out["config"] = c.config.dump();
            out["vocabulary"] = c.vocabulary;
            out["tensors"] = tensors;
            return out;
        },
        py::arg("path"), "Read a model container; config is returned as a JSON string.");

    m.def(
        "run_cli",
        [](const std::vector<std::string>& args) {
            std::vector<const char*> argv{"availnet"};
            for (const auto& a : args) argv.push_back(a.c_str());
            std::ostringstream out, err;
            int status = 0;
            {
                py::gil_scoped_release release;
                status = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
            }
            return py::make_tuple(status, out.str(), err.str());
        },
        py::arg("args"), "Run the command-line tool in-process; returns (status, stdout, stderr).");
}
