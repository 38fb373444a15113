#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "offramp/config.hpp"
#include "offramp/inference.hpp"
#include "offramp/metrics.hpp"
#include "offramp/model.hpp"
#include "offramp/training.hpp"

namespace py = pybind11;
using namespace offramp;

PYBIND11_MODULE(_offramp, m) {
  m.doc() = "Early-exit transformer encoder toolkit";

  py::enum_<TaskMetric>(m, "TaskMetric")
      .value("accuracy", TaskMetric::accuracy)
      .value("binary_f1", TaskMetric::binary_f1);

  py::enum_<Stratum>(m, "Stratum")
      .value("unknown", Stratum::unknown)
      .value("easy", Stratum::easy)
      .value("hard", Stratum::hard);

  py::class_<Example>(m, "Example")
      .def(py::init<>())
      .def_readwrite("text_a", &Example::text_a)
      .def_readwrite("text_b", &Example::text_b)
      .def_readwrite("label", &Example::label);

  py::class_<TaskMeta>(m, "TaskMeta")
      .def_readonly("n_classes", &TaskMeta::n_classes)
      .def_readonly("is_pair", &TaskMeta::is_pair)
      .def_readonly("metric", &TaskMeta::metric);

  py::class_<Dataset>(m, "Dataset")
      .def_readonly("train", &Dataset::train)
      .def_readonly("dev", &Dataset::dev)
      .def_readonly("test", &Dataset::test)
      .def_readonly("meta", &Dataset::meta);

  py::class_<Vocab>(m, "Vocab")
      .def_static("build", &Vocab::build, py::arg("corpus"), py::arg("max_size"))
      .def("id", &Vocab::id)
      .def("__len__", &Vocab::size)
      .def("save", &Vocab::save)
      .def_static("load", &Vocab::load);

  py::class_<SynthSpec>(m, "SynthSpec")
      .def(py::init<>())
      .def_readwrite("n_classes", &SynthSpec::n_classes)
      .def_readwrite("vocab_size", &SynthSpec::vocab_size)
      .def_readwrite("train_count", &SynthSpec::train_count)
      .def_readwrite("dev_count", &SynthSpec::dev_count)
      .def_readwrite("test_count", &SynthSpec::test_count)
      .def_readwrite("seq_len", &SynthSpec::seq_len)
      .def_readwrite("easy_fraction", &SynthSpec::easy_fraction);

  m.def("make_synthetic_task", &make_synthetic_task, py::arg("spec"), py::arg("seed"));
  m.def("stratum_of", &stratum_of);

  py::class_<TokenBatch>(m, "TokenBatch")
      .def_readonly("batch", &TokenBatch::batch)
      .def_readonly("seq_len", &TokenBatch::seq_len)
      .def_readonly("ids", &TokenBatch::ids)
      .def_readonly("mask", &TokenBatch::mask)
      .def_readonly("segments", &TokenBatch::segments)
      .def_readonly("labels", &TokenBatch::labels);

  py::class_<EncodedSplit>(m, "EncodedSplit")
      .def_readonly("count", &EncodedSplit::count)
      .def_readonly("seq_len", &EncodedSplit::seq_len)
      .def_readonly("labels", &EncodedSplit::labels)
      .def_readonly("strata", &EncodedSplit::strata)
      .def("single", &EncodedSplit::single)
      .def("gather", &EncodedSplit::gather);

  m.def("encode_split", &encode_split, py::arg("examples"), py::arg("vocab"), py::arg("max_len"));

  py::class_<ModelConfig>(m, "ModelConfig")
      .def(py::init<>())
      .def_readwrite("n_layers", &ModelConfig::n_layers)
      .def_readwrite("hidden_size", &ModelConfig::hidden_size)
      .def_readwrite("n_heads", &ModelConfig::n_heads)
      .def_readwrite("ffn_size", &ModelConfig::ffn_size)
      .def_readwrite("vocab_size", &ModelConfig::vocab_size)
      .def_readwrite("max_seq_len", &ModelConfig::max_seq_len)
      .def_readwrite("n_classes", &ModelConfig::n_classes)
      .def_readwrite("dropout_rate", &ModelConfig::dropout_rate);

  py::class_<EarlyExitModel>(m, "EarlyExitModel")
      .def(py::init<ModelConfig, std::uint64_t>(), py::arg("config"), py::arg("seed"))
      .def_property_readonly("config", &EarlyExitModel::config)
      .def("forward_all",
           [](const EarlyExitModel& model, const TokenBatch& batch) {
             std::vector<std::pair<Shape, std::vector<double>>> out;
             for (const Tensor& t : model.forward_all(batch)) out.emplace_back(t.shape(), t.data());
             return out;
           })
      .def("forward_prefix",
           [](const EarlyExitModel& model, const TokenBatch& batch, int depth) {
             Tensor t = model.forward_prefix(batch, depth);
             return std::make_pair(t.shape(), t.data());
           })
      .def("save", &EarlyExitModel::save)
      .def_static("load", &EarlyExitModel::load)
      .def("layer_executions", &EarlyExitModel::layer_executions)
      .def("reset_layer_executions", &EarlyExitModel::reset_layer_executions);

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("epochs_stage1", &TrainConfig::epochs_stage1)
      .def_readwrite("epochs_stage2", &TrainConfig::epochs_stage2)
      .def_readwrite("batch_size", &TrainConfig::batch_size)
      .def_readwrite("learning_rate", &TrainConfig::learning_rate)
      .def_readwrite("beta1", &TrainConfig::beta1)
      .def_readwrite("beta2", &TrainConfig::beta2)
      .def_readwrite("epsilon", &TrainConfig::epsilon)
      .def_readwrite("clip_norm", &TrainConfig::clip_norm)
      .def_readwrite("seed", &TrainConfig::seed);

  py::class_<EpochStats>(m, "EpochStats")
      .def_readonly("epoch", &EpochStats::epoch)
      .def_readonly("mean_loss", &EpochStats::mean_loss);

  py::class_<StageReport>(m, "StageReport")
      .def_readonly("stage", &StageReport::stage)
      .def_readonly("epochs", &StageReport::epochs)
      .def_readonly("wall_clock_s", &StageReport::wall_clock_s);

  py::class_<TrainReport>(m, "TrainReport")
      .def_readonly("stage1", &TrainReport::stage1)
      .def_readonly("stage2", &TrainReport::stage2)
      .def_readonly("final_ramp_dev_quality", &TrainReport::final_ramp_dev_quality)
      .def("to_json", &TrainReport::to_json);

  m.def("stage_one", &stage_one, py::arg("model"), py::arg("train_set"), py::arg("config"));
  m.def("stage_two", &stage_two, py::arg("model"), py::arg("train_set"), py::arg("config"));
  m.def("train_two_stage", &train_two_stage, py::arg("model"), py::arg("train_set"), py::arg("config"));

  py::class_<ExitPolicy>(m, "ExitPolicy")
      .def(py::init<>())
      .def(py::init([](double s) { return ExitPolicy{s}; }), py::arg("entropy_threshold"))
      .def_readwrite("entropy_threshold", &ExitPolicy::entropy_threshold);

  py::class_<ExitRecord>(m, "ExitRecord")
      .def_readonly("sample_id", &ExitRecord::sample_id)
      .def_readonly("exit_layer", &ExitRecord::exit_layer)
      .def_readonly("entropy", &ExitRecord::entropy)
      .def_readonly("predicted_class", &ExitRecord::predicted_class)
      .def_readonly("probabilities", &ExitRecord::probabilities)
      .def_readonly("layers_executed", &ExitRecord::layers_executed)
      .def_readonly("label", &ExitRecord::label);

  m.def("entropy", &entropy, py::arg("probabilities"));
  m.def("infer_early_exit", &infer_early_exit, py::arg("model"), py::arg("sample"), py::arg("policy"));
  m.def("infer_forced_exit", &infer_forced_exit, py::arg("model"), py::arg("samples"), py::arg("layer"));

  py::class_<BatchInferenceResult>(m, "BatchInferenceResult")
      .def_readonly("records", &BatchInferenceResult::records)
      .def_readonly("wall_clock_s", &BatchInferenceResult::wall_clock_s)
      .def_readonly("total_layers_executed", &BatchInferenceResult::total_layers_executed);

  m.def("infer_batch", &infer_batch, py::arg("model"), py::arg("dataset"), py::arg("policy"));

  py::class_<ExitHistogram>(m, "ExitHistogram")
      .def(py::init([](int n_layers, std::vector<std::uint64_t> counts) {
             return ExitHistogram{n_layers, std::move(counts)};
           }),
           py::arg("n_layers"), py::arg("counts"))
      .def_readonly("n_layers", &ExitHistogram::n_layers)
      .def_readonly("counts", &ExitHistogram::counts)
      .def("total", &ExitHistogram::total);

  m.def("expected_saving", &expected_saving, py::arg("histogram"));
  m.def("quality", &quality, py::arg("predictions"), py::arg("labels"), py::arg("metric"));
  m.def("default_threshold_grid", &default_threshold_grid, py::arg("n_classes"), py::arg("points") = 21,
        py::arg("low") = 0.005);
  m.def("exit_distribution", &exit_distribution, py::arg("records"), py::arg("n_layers"));
  m.def("exit_fractions", &exit_fractions);
  m.def("layerwise_quality", &layerwise_quality, py::arg("model"), py::arg("dev_set"), py::arg("metric"));

  py::class_<TradeoffPoint>(m, "TradeoffPoint")
      .def_readonly("threshold", &TradeoffPoint::threshold)
      .def_readonly("accuracy", &TradeoffPoint::accuracy)
      .def_readonly("f1", &TradeoffPoint::f1)
      .def_readonly("quality", &TradeoffPoint::quality)
      .def_readonly("expected_saving", &TradeoffPoint::expected_saving)
      .def_readonly("layer_execution_saving", &TradeoffPoint::layer_execution_saving)
      .def_readonly("measured_time_saving", &TradeoffPoint::measured_time_saving)
      .def_readonly("wall_clock_s", &TradeoffPoint::wall_clock_s)
      .def_readonly("histogram", &TradeoffPoint::histogram);

  py::class_<SweepReport>(m, "SweepReport")
      .def_readonly("points", &SweepReport::points)
      .def_readonly("baseline_quality", &SweepReport::baseline_quality)
      .def_readonly("baseline_wall_clock_s", &SweepReport::baseline_wall_clock_s)
      .def_readonly("n_layers", &SweepReport::n_layers)
      .def_readonly("metric", &SweepReport::metric);

  m.def("sweep",
        [](const EarlyExitModel& model, const EncodedSplit& dev, const std::vector<double>& grid,
           TaskMetric metric) { return sweep(model, dev, grid, metric); },
        py::arg("model"), py::arg("dev_set"), py::arg("grid"), py::arg("metric"));
  m.def("select_operating_point", &select_operating_point, py::arg("report"), py::arg("max_drop_points"));
  m.def("select_operating_points", &select_operating_points, py::arg("report"), py::arg("drop_budgets"));
}
