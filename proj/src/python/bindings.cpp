#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "lapstrat/ingest.hpp"
#include "lapstrat/pipeline.hpp"
#include "lapstrat/stats.hpp"
#include "lapstrat/track.hpp"
#include "lapstrat/vehicle.hpp"

namespace py = pybind11;
using namespace lapstrat;

PYBIND11_MODULE(_core, m) {
  m.doc() = "race strategy toolkit core";
  m.attr("__version__") = pipeline::kToolVersion;

  py::class_<track::TrackGeometry>(m, "TrackGeometry")
      .def_property_readonly("length", [](const track::TrackGeometry& g) { return g.length; })
      .def_property_readonly("n_sections",
                             [](const track::TrackGeometry& g) { return g.n_sections; })
      .def_property_readonly("n_straights",
                             [](const track::TrackGeometry& g) { return g.n_straights; })
      .def("__repr__", [](const track::TrackGeometry& g) {
        return "<TrackGeometry " + std::to_string(g.length) + " m, " +
               std::to_string(g.n_sections) + " sections>";
      });
  m.def("make_preset", &track::make_preset, py::arg("name"), py::arg("delta_s") = 2.0);
  m.def("load_geometry", &track::load_geometry, py::arg("path"));
  m.def("geometry_to_string", &track::geometry_to_string, py::arg("geometry"));

  py::class_<vehicle::VehicleParams>(m, "VehicleParams")
      .def_readwrite("m", &vehicle::VehicleParams::m)
      .def_readwrite("mu", &vehicle::VehicleParams::mu)
      .def_readwrite("rho", &vehicle::VehicleParams::rho)
      .def_readwrite("cx", &vehicle::VehicleParams::cx)
      .def_readwrite("cz", &vehicle::VehicleParams::cz)
      .def_readwrite("S", &vehicle::VehicleParams::S)
      .def_readwrite("C_res", &vehicle::VehicleParams::C_res);
  m.def("default_params", &vehicle::default_params);
  m.def("load_params", &vehicle::load_params, py::arg("path"));

  py::class_<vehicle::StrategyBudgets>(m, "StrategyBudgets")
      .def_readwrite("e_el_j", &vehicle::StrategyBudgets::e_el_j)
      .def_readwrite("fuel_kg", &vehicle::StrategyBudgets::fuel_kg)
      .def_static("unlimited", &vehicle::StrategyBudgets::unlimited, py::arg("geometry"))
      .def_static("none", &vehicle::StrategyBudgets::none, py::arg("geometry"));

  py::class_<vehicle::LapResult>(m, "LapResult")
      .def_readonly("lap_time", &vehicle::LapResult::lap_time)
      .def_readonly("fuel_kg", &vehicle::LapResult::fuel_kg)
      .def_readonly("e_el_used_j", &vehicle::LapResult::e_el_used_j)
      .def_readonly("e_el_rec_kers_j", &vehicle::LapResult::e_el_rec_kers_j)
      .def_readonly("time_at", &vehicle::LapResult::time_at)
      .def_readonly("warnings", &vehicle::LapResult::warnings)
      .def_property_readonly("speed",
                             [](const vehicle::LapResult& r) {
                               std::vector<double> v;
                               v.reserve(r.points.size());
                               for (const auto& p : r.points) v.push_back(p.v);
                               return v;
                             })
      .def("__repr__", [](const vehicle::LapResult& r) {
        return "<LapResult " + std::to_string(r.lap_time) + " s>";
      });
  m.def(
      "simulate_lap",
      [](const track::TrackGeometry& g, const vehicle::VehicleParams& p,
         const vehicle::StrategyBudgets& budgets) { return vehicle::simulate_lap(g, p, budgets); },
      py::arg("geometry"), py::arg("params"), py::arg("budgets"));

  m.def("dbscan", &ingest::dbscan, py::arg("points"), py::arg("eps"), py::arg("min_pts"));

  py::class_<ingest::SectorTimeRecord>(m, "SectorTimeRecord")
      .def(py::init<>())
      .def_readwrite("car_number", &ingest::SectorTimeRecord::car_number)
      .def_readwrite("lap", &ingest::SectorTimeRecord::lap)
      .def_readwrite("stop_flag", &ingest::SectorTimeRecord::stop_flag)
      .def_readwrite("s1", &ingest::SectorTimeRecord::s1)
      .def_readwrite("s2", &ingest::SectorTimeRecord::s2)
      .def_readwrite("s3", &ingest::SectorTimeRecord::s3)
      .def_readwrite("elapsed", &ingest::SectorTimeRecord::elapsed)
      .def_property(
          "car_class",
          [](const ingest::SectorTimeRecord& r) { return ingest::to_string(r.car_class); },
          [](ingest::SectorTimeRecord& r, const std::string& c) {
            r.car_class = ingest::car_class_from_string(c);
          })
      .def_property_readonly("lap_time", &ingest::SectorTimeRecord::lap_time);
  m.def("parse_sector_times", &ingest::parse_sector_times, py::arg("path"));
  m.def("parse_sector_times_string", &ingest::parse_sector_times_string, py::arg("text"),
        py::arg("name") = "<string>");
  m.def("sector_times_to_string", &ingest::sector_times_to_string, py::arg("records"));

  py::class_<ingest::RejectedLap>(m, "RejectedLap")
      .def_readonly("car_number", &ingest::RejectedLap::car_number)
      .def_readonly("lap", &ingest::RejectedLap::lap)
      .def_property_readonly("reason", [](const ingest::RejectedLap& r) {
        return ingest::to_string(r.reason);
      });
  py::class_<ingest::CleanedLapSet>(m, "CleanedLapSet")
      .def_readonly("retained", &ingest::CleanedLapSet::retained)
      .def_readonly("rejected", &ingest::CleanedLapSet::rejected)
      .def_readonly("warnings", &ingest::CleanedLapSet::warnings);
  m.def(
      "clean_laps",
      [](const std::vector<ingest::SectorTimeRecord>& records, double eps_s, int min_pts) {
        return ingest::clean_laps(records, {eps_s, min_pts});
      },
      py::arg("records"), py::arg("eps_s") = 2.0, py::arg("min_pts") = 5);

  py::class_<stats::ReferenceProfile>(m, "ReferenceProfile")
      .def_readwrite("s", &stats::ReferenceProfile::s)
      .def_readwrite("v", &stats::ReferenceProfile::v)
      .def_readwrite("sector_times", &stats::ReferenceProfile::sector_times)
      .def("validate", &stats::ReferenceProfile::validate, py::arg("geometry"));
  m.def("load_profile", &stats::load_profile, py::arg("samples_path"), py::arg("sectors_path"));
  m.def("reconstruct_speed", &stats::reconstruct_speed, py::arg("reference"), py::arg("times"),
        py::arg("geometry"));
  m.def("lethargy_sector_times", &stats::lethargy_sector_times, py::arg("reference"),
        py::arg("times"), py::arg("geometry"));

  py::class_<pipeline::RunConfig>(m, "RunConfig")
      .def(py::init<>())
      .def_readwrite("seed", &pipeline::RunConfig::seed)
      .def_readwrite("out_dir", &pipeline::RunConfig::out_dir)
      .def_readwrite("jobs", &pipeline::RunConfig::jobs)
      .def_readwrite("stages", &pipeline::RunConfig::stages)
      .def("__repr__", [](const pipeline::RunConfig& c) { return pipeline::config_to_string(c); });
  m.def("config_from_string", &pipeline::config_from_string, py::arg("text"),
        py::arg("name") = "<string>");
  m.def("load_config", &pipeline::load_config, py::arg("path"));
  m.def("config_to_string", &pipeline::config_to_string, py::arg("config"));

  py::class_<pipeline::StageResult>(m, "StageResult")
      .def_readonly("stage", &pipeline::StageResult::stage)
      .def_readonly("artifacts", &pipeline::StageResult::artifacts)
      .def_readonly("warnings", &pipeline::StageResult::warnings);
  m.def("cmd_synth", &pipeline::cmd_synth, py::arg("config"));
  m.def("cmd_ingest", &pipeline::cmd_ingest, py::arg("config"));
  m.def("cmd_stats", &pipeline::cmd_stats, py::arg("config"));
  m.def("cmd_optimize", &pipeline::cmd_optimize, py::arg("config"));
  m.def("cmd_simulate", &pipeline::cmd_simulate, py::arg("config"));
  m.def("cmd_evaluate", &pipeline::cmd_evaluate, py::arg("config"));
  m.def("cmd_stint", &pipeline::cmd_stint, py::arg("config"));
  m.def("run_stages", &pipeline::run_stages, py::arg("config"));

  py::register_exception<pipeline::PipelineError>(m, "PipelineError");
}
