// sorscn: build, stream, evaluate and compare self-organizing reservoir models.
//
// Exit codes: 0 success, 1 configuration error, 2 data error, 3 all trials failed.

#include "sorscn/experiment.hpp"
#include "sorscn/model_io.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>

namespace fs = std::filesystem;
using namespace sorscn;
using namespace sorscn::experiment;

namespace {

enum ExitCode { kOk = 0, kConfigError = 1, kDataError = 2, kAllFailed = 3 };

struct CommonOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<Index> trials;
  std::string out;
  std::string variant;
  std::vector<std::string> sets;
  std::string model;
  std::string split{"test"};
};

ExperimentConfig resolve(const CommonOptions& o) {
  std::vector<std::string> overrides = o.sets;
  if (o.seed) overrides.push_back("run.seed=" + std::to_string(*o.seed));
  if (o.trials) overrides.push_back("run.trials=" + std::to_string(*o.trials));
  if (!o.out.empty()) overrides.push_back("run.out=" + json(o.out).dump());
  if (o.config.empty()) return resolve_config(json::object(), overrides);
  return load_config(o.config, overrides);
}

Variant pick_variant(const CommonOptions& o, Variant fallback) {
  if (o.variant.empty()) return fallback;
  const auto v = variant_from_string(o.variant);
  if (!v) throw ConfigError("unknown variant '" + o.variant + "' (esn, rscn, sorscn1, sorscn2)");
  return *v;
}

fs::path out_dir(const ExperimentConfig& cfg) {
  fs::path p(cfg.run.out);
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw ConfigError("cannot create output directory '" + p.string() + "': " + ec.message());
  return p;
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write '" + p.string() + "'");
  out << text;
}

const data::Segment& segment_for(const PreparedData& d, const std::string& split) {
  if (split == "train") return d.train;
  if (split == "validation") return d.validation;
  if (split == "test") return d.test;
  throw ConfigError("--split must be train, validation or test");
}

json affine_json(const data::AffineMap& m) {
  return json{{"offset", std::vector<double>(m.offset.data(), m.offset.data() + m.offset.size())},
              {"scale", std::vector<double>(m.scale.data(), m.scale.data() + m.scale.size())}};
}

json interval_json(const ErrorInterval<double>& iv) {
  return json{{"e_min", iv.e_min},
              {"e_max", iv.e_max},
              {"statistic", iv.calibration.statistic},
              {"kappa_lo", iv.calibration.kappa_lo},
              {"kappa_hi", iv.calibration.kappa_hi},
              {"window", iv.calibration.window}};
}

ErrorInterval<double> interval_from_json(const json& j) {
  ErrorInterval<double> iv;
  try {
    iv.e_min = j.at("e_min").get<double>();
    iv.e_max = j.at("e_max").get<double>();
    iv.calibration = {j.at("statistic").get<double>(), j.at("kappa_lo").get<double>(),
                      j.at("kappa_hi").get<double>(), j.at("window").get<Index>()};
  } catch (const json::exception&) {
    throw CorruptFile("model file carries a malformed error interval");
  }
  return iv;
}

fs::path model_path(const CommonOptions& o, const ExperimentConfig& cfg) {
  return o.model.empty() ? fs::path(cfg.run.out) / "model.sorscn" : fs::path(o.model);
}

int cmd_gen(const CommonOptions& o) {
  auto cfg = resolve(o);
  auto spec = cfg.dataset.synthetic;
  if (o.seed) spec.seed = *o.seed;
  const auto ds = data::generate_synthetic(spec);
  const auto dir = out_dir(cfg);
  std::ofstream csv(dir / "synthetic.csv");
  data::write_csv(csv, ds);
  json meta{{"generator", data::to_string(spec.generator)},
            {"segment_lengths", spec.segment_lengths},
            {"noise_std", spec.noise_std},
            {"seed", spec.seed},
            {"drift_points", ds.drift_points}};
  write_file(dir / "synthetic.json", meta.dump(2) + "\n");
  std::cout << "wrote " << ds.samples() << " rows to " << (dir / "synthetic.csv").string() << "\n";
  return kOk;
}

int cmd_build(const CommonOptions& o) {
  const auto cfg = resolve(o);
  const Variant v = pick_variant(o, Variant::sorscn2);
  const auto data = prepare_data(cfg.dataset);
  BuiltModel built;
  try {
    built = build_model(cfg, data, v, cfg.run.seed);
  } catch (const DataError&) {
    throw;
  } catch (const Error& e) {
    std::cerr << "build failed: " << e.what() << "\n";
    return kAllFailed;
  }
  io::ModelMeta meta;
  meta.fingerprint = cfg.fingerprint();
  meta.extra["variant"] = to_string(v);
  meta.extra["trial_seed"] = cfg.run.seed;
  if (v == Variant::sorscn1 || v == Variant::sorscn2) meta.extra["interval"] = interval_json(built.interval);
  meta.extra["normalizer"] = {{"inputs", affine_json(data.normalizer.inputs)},
                              {"targets", affine_json(data.normalizer.targets)}};
  meta.extra["config"] = cfg.resolved;
  const auto dir = out_dir(cfg);
  const auto path = model_path(o, cfg);
  io::save_model(built.model, path.string(), meta);

  auto score = [&](const data::Segment& s) {
    return nrmse(predict(built.model, s.inputs, s.washout), s.targets.rightCols(s.effective()));
  };
  json summary{{"variant", to_string(v)},
               {"model", path.string()},
               {"blocks", built.model.block_count()},
               {"nodes", built.model.state_size()},
               {"train_nrmse", score(data.train)},
               {"validation_nrmse", score(data.validation)},
               {"fingerprint", meta.fingerprint}};
  std::cout << summary.dump() << "\n";
  return kOk;
}

int cmd_eval(const CommonOptions& o) {
  const auto cfg = resolve(o);
  const auto loaded = io::load_model(model_path(o, cfg).string());
  const auto data = prepare_data(cfg.dataset);
  const auto& s = segment_for(data, o.split);
  if (loaded.model.input_dim() != s.inputs.rows() || loaded.model.output_dim() != s.targets.rows()) {
    throw DataError("model dimensions do not match the configured dataset");
  }
  const double e = nrmse(predict(loaded.model, s.inputs, s.washout), s.targets.rightCols(s.effective()));
  std::cout << json{{"split", o.split}, {"samples", s.effective()}, {"nrmse", e}}.dump() << "\n";
  return kOk;
}

int cmd_stream(const CommonOptions& o) {
  const auto cfg = resolve(o);
  const auto loaded = io::load_model(model_path(o, cfg).string());
  const auto data = prepare_data(cfg.dataset);
  if (o.split == "train") throw ConfigError("stream runs on the validation or test split");
  const auto& s = segment_for(data, o.split);
  Variant fallback = Variant::sorscn2;
  if (loaded.meta.extra.contains("variant")) {
    if (auto v = variant_from_string(loaded.meta.extra.at("variant").get<std::string>())) fallback = *v;
  }
  const Variant v = pick_variant(o, fallback);
  if (v != Variant::sorscn1 && v != Variant::sorscn2) {
    throw ConfigError("stream needs a self-organizing variant (sorscn1 or sorscn2)");
  }
  if (!loaded.meta.extra.contains("interval")) {
    throw ConfigError("model file has no calibrated error interval; build it with --variant sorscn1|sorscn2");
  }
  if (loaded.model.input_dim() != s.inputs.rows() || loaded.model.output_dim() != s.targets.rows()) {
    throw DataError("model dimensions do not match the configured dataset");
  }
  const auto interval = interval_from_json(loaded.meta.extra.at("interval"));
  const std::uint64_t seed = loaded.meta.extra.value("trial_seed", cfg.run.seed);
  const auto result = stream_segment(cfg, data, loaded.model, interval, v, s, seed);

  const auto dir = out_dir(cfg);
  std::string lines;
  for (const auto& w : result.verdicts) lines += verdict_to_json(w).dump() + "\n";
  write_file(dir / "timeline.jsonl", lines);
  io::ModelMeta meta = loaded.meta;
  meta.extra["variant"] = to_string(v);
  io::save_model(result.model, (dir / "model_streamed.sorscn").string(), meta);
  std::cout << json{{"variant", to_string(v)},
                    {"windows", result.verdicts.size()},
                    {"blocks_before", loaded.model.block_count()},
                    {"blocks_after", result.model.block_count()},
                    {"nrmse", nrmse(result.predictions, s.targets.rightCols(s.effective()))}}
                   .dump()
            << "\n";
  return kOk;
}

int cmd_compare(const CommonOptions& o) {
  auto cfg = resolve(o);
  if (!o.variant.empty()) {
    pick_variant(o, Variant::esn);
    cfg = parse_config([&] {
      json r = cfg.resolved;
      r["model"]["variants"] = json::array({o.variant});
      return r;
    }());
  }
  const auto dir = out_dir(cfg);
  const auto report = run_experiment(cfg);
  write_file(dir / "report.json", report_to_json(report, utc_timestamp()).dump(2) + "\n");
  const auto table = report_table(report);
  write_file(dir / "report.txt", table);
  write_file(dir / "timeline.jsonl", timeline_jsonl(report));
  std::cout << table;
  for (const auto& v : report.variants) {
    for (const auto& t : v.trials) {
      if (!t.ok) std::cerr << to_string(v.variant) << " trial " << t.index << " failed: " << t.error << "\n";
    }
  }
  return report.any_all_failed() ? kAllFailed : kOk;
}

int cmd_sweep(const CommonOptions& o) {
  const auto cfg = resolve(o);
  const Variant v = pick_variant(o, cfg.model.variants.back());
  const auto dir = out_dir(cfg);
  const auto grid = grid_search(cfg, v);
  write_file(dir / "sweep.json", grid_to_json(grid, utc_timestamp()).dump(2) + "\n");
  write_file(dir / "surface.csv", grid_surface_csv(grid));
  if (!grid.best) {
    std::cerr << "every grid point failed\n";
    return kAllFailed;
  }
  const auto& best = grid.points[*grid.best];
  json chosen = json::object();
  for (std::size_t k = 0; k < grid.axes.size(); ++k) chosen[grid.axes[k]] = best.values[k];
  std::cout << json{{"variant", to_string(v)},
                    {"best", chosen},
                    {"validation_nrmse", best.report.variants.front().validation.mean},
                    {"test_nrmse", best.report.variants.front().test.mean}}
                   .dump()
            << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Self-organizing recurrent stochastic configuration networks"};
  app.require_subcommand(1);
  CommonOptions o;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "experiment config (JSON)");
    sub->add_option("--seed", o.seed, "base seed (run.seed)");
    sub->add_option("--trials", o.trials, "trial count (run.trials)")->check(CLI::PositiveNumber);
    sub->add_option("--out", o.out, "output directory (run.out)");
    sub->add_option("--set", o.sets, "override a config key, e.g. --set model.theta=0.8")->allow_extra_args(false);
  };

  struct Command {
    const char* name;
    const char* help;
    int (*run)(const CommonOptions&);
    bool variant, model, split;
  };
  const Command commands[] = {
      {"build", "construct an initial model and save it", cmd_build, true, true, false},
      {"stream", "run the self-organizing driver over a split", cmd_stream, true, true, true},
      {"eval", "NRMSE of a saved model on a split", cmd_eval, false, true, true},
      {"compare", "multi-trial comparison of the model variants", cmd_compare, true, false, false},
      {"sweep", "grid search over the configured sweep axes", cmd_sweep, true, false, false},
      {"gen", "write the configured synthetic stream as CSV", cmd_gen, false, false, false},
  };
  std::vector<std::pair<CLI::App*, const Command*>> subs;
  for (const auto& c : commands) {
    auto* sub = app.add_subcommand(c.name, c.help);
    add_common(sub);
    if (c.variant) sub->add_option("--variant", o.variant, "esn, rscn, sorscn1 or sorscn2");
    if (c.model) sub->add_option("--model", o.model, "model file (default <out>/model.sorscn)");
    if (c.split) sub->add_option("--split", o.split, "train, validation or test")->check(CLI::IsMember({"train", "validation", "test"}));
    subs.emplace_back(sub, &c);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfigError;
  }

  try {
    for (const auto& [sub, cmd] : subs) {
      if (sub->parsed()) return cmd->run(o);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const CorruptFile& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const VersionMismatch& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const WashoutTooLarge& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kAllFailed;
  }
  return kConfigError;
}
