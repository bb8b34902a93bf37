#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>

#include <nlohmann/json.hpp>

#include "dragtraffic/dataio.hpp"
#include "dragtraffic/error.hpp"
#include "dragtraffic/moe.hpp"
#include "dragtraffic/service.hpp"
#include "dragtraffic/synth.hpp"
#include "dragtraffic/training.hpp"

using json = nlohmann::json;
namespace fs = std::filesystem;
using namespace dragtraffic;

namespace {

// Every subcommand resolves its settings as: defaults, then the --config JSON
// file, then flags given on the command line.
struct Command {
  CLI::App* app = nullptr;
  json defaults = json::object();
  std::string config_path;
  std::map<std::string, std::string> flag_values;
  std::map<std::string, CLI::Option*> flags;

  void flag(const std::string& key, const std::string& help) {
    const std::string name = "--" + key;
    std::string dashed = name;
    std::replace(dashed.begin(), dashed.end(), '_', '-');
    flags[key] = app->add_option(dashed, flag_values[key], help);
  }

  // Flags are typed by their default: strings stay verbatim, everything else
  // is read as JSON, and list settings also accept "a,b,c".
  json flag_value(const std::string& key, const std::string& raw) const {
    const bool textual = !defaults.contains(key) || defaults.at(key).is_string();
    if (textual) return raw;
    json v = json::parse(raw, nullptr, false);
    if (!v.is_discarded()) return v;
    if (defaults.at(key).is_array()) {
      json list = json::array();
      std::stringstream ss(raw);
      for (std::string item; std::getline(ss, item, ',');) {
        json e = json::parse(item, nullptr, false);
        list.push_back(e.is_discarded() ? json(item) : e);
      }
      return list;
    }
    throw ValidationError("--" + key + ": cannot read '" + raw + "'");
  }

  json resolve() const {
    json out = defaults;
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      if (!in) throw NotFoundError("cannot open config '" + config_path + "'");
      json cfg;
      try {
        cfg = json::parse(in);
      } catch (const json::parse_error& e) {
        throw ValidationError("config '" + config_path + "': " + e.what());
      }
      const std::string section = app->get_name();
      out.merge_patch(cfg.contains(section) && cfg.at(section).is_object() ? cfg.at(section) : cfg);
    }
    for (const auto& [key, opt] : flags) {
      if (opt->count() == 0) continue;
      out[key] = flag_value(key, flag_values.at(key));
    }
    return out;
  }
};

Command make_command(CLI::App& root, const std::string& name, const std::string& help, json defaults) {
  Command c;
  c.app = root.add_subcommand(name, help);
  c.defaults = std::move(defaults);
  c.app->add_option("--config", c.config_path, "JSON file with settings for this command");
  return c;
}

void log_config(const std::string& name, const json& resolved) {
  std::cerr << "[" << name << "] config " << resolved.dump() << "\n";
}

std::string require(const json& cfg, const char* key) {
  if (!cfg.contains(key) || cfg.at(key).is_null() || (cfg.at(key).is_string() && cfg.at(key).get<std::string>().empty())) {
    throw ValidationError(std::string("missing required setting '") + key + "'");
  }
  return cfg.at(key).is_string() ? cfg.at(key).get<std::string>() : cfg.at(key).dump();
}

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << j.dump(2) << "\n";
}

std::shared_ptr<MixtureOfExperts> load_experts(const json& cfg) {
  auto moe = std::make_shared<MixtureOfExperts>();
  const json& list = cfg.at("checkpoints");
  const std::vector<std::string> paths =
      list.is_string() ? std::vector<std::string>{list.get<std::string>()} : list.get<std::vector<std::string>>();
  if (paths.empty()) throw ValidationError("at least one checkpoint is required");
  for (const auto& p : paths) {
    auto model = std::make_shared<ExpertModel>(ExpertModel::load(p));
    std::cerr << "loaded " << to_string(model->config().agent_type) << " expert from " << p << "\n";
    moe->add_expert(std::move(model));
  }
  return moe;
}

int run_synth(const json& cfg) {
  const SynthConfig sc = SynthConfig::from_json(cfg);
  const auto scenes = synthesize_scenarios(sc);
  save_scenarios(require(cfg, "out"), scenes);
  std::cerr << "wrote " << scenes.size() << " scenarios\n";
  return 0;
}

int run_preprocess(const json& cfg) {
  const auto raw = load_scenarios(require(cfg, "in"));
  PreprocessOptions o;
  o.window_steps = cfg.value("window_steps", o.window_steps);
  o.min_agents = cfg.value("min_agents", o.min_agents);
  o.min_valid_frames = cfg.value("min_valid_frames", o.min_valid_frames);
  o.crop_half = cfg.value("crop_half", o.crop_half);
  const PreprocessResult r = preprocess(raw, o);
  const fs::path dir = require(cfg, "out_dir");
  fs::create_directories(dir);
  for (const auto& [type, records] : r.datasets) {
    save_scenarios(dir / (std::string(to_string(type)) + ".jsonl"), records);
    std::cerr << to_string(type) << ": " << records.size() << " records\n";
  }
  std::ofstream drops(dir / "drops.jsonl");
  for (const auto& d : r.drops) drops << drop_to_json(d).dump() << "\n";
  std::cerr << "dropped " << r.drops.size() << " windows\n";
  return 0;
}

int run_split(const json& cfg) {
  const auto records = load_scenarios(require(cfg, "in"));
  SplitRatios ratios;
  if (cfg.contains("ratios")) {
    const auto v = cfg.at("ratios").get<std::vector<double>>();
    if (v.size() != 3) throw ValidationError("ratios needs three values");
    ratios = {v[0], v[1], v[2]};
  }
  const DatasetSplit split = split_dataset(records, ratios, cfg.value("seed", std::uint64_t{0}));
  const fs::path dir = require(cfg, "out_dir");
  fs::create_directories(dir);
  save_scenarios(dir / "train.jsonl", split.train);
  save_scenarios(dir / "val.jsonl", split.val);
  save_scenarios(dir / "test.jsonl", split.test);
  std::cerr << "train " << split.train.size() << ", val " << split.val.size() << ", test " << split.test.size() << "\n";
  return 0;
}

int run_train(const json& cfg) {
  TrainConfig tc = TrainConfig::from_json(cfg);
  const std::vector<std::string> data_paths = [&] {
    std::vector<std::string> out;
    std::stringstream ss(require(cfg, "data"));
    for (std::string p; std::getline(ss, p, ',');) out.push_back(p);
    return out;
  }();
  std::vector<Scenario> records;
  for (const auto& p : data_paths) {
    auto part = load_scenarios(p);
    records.insert(records.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
  }
  const bool mixture = cfg.value("mixture", false);
  std::optional<ExpertModel> model;
  if (cfg.contains("init") && !cfg.at("init").get<std::string>().empty()) {
    model = ExpertModel::load(cfg.at("init").get<std::string>());
  } else {
    if (tc.stage == Stage::InitializerFinetune) {
      throw ValidationError("stage 2 needs --init pointing at a stage-1 checkpoint");
    }
    ModelConfig mc = ModelConfig::from_json(cfg.value("model", json::object()));
    if (cfg.contains("type")) mc.agent_type = parse_agent_type(cfg.at("type").get<std::string>());
    model = ExpertModel::create(mc, cfg.value("model_seed", std::uint64_t{0}));
  }
  if (!mixture) {
    std::erase_if(records, [&](const Scenario& s) {
      return s.agent(s.ego_id).type != model->config().agent_type;
    });
  }
  const auto examples = make_examples(records, model->config());
  std::cerr << "training " << to_string(tc.stage) << " on " << examples.size() << " examples\n";
  train(*model, examples, tc, [](const EpochLog& l) {
    std::cerr << "epoch " << l.epoch << " loss " << l.loss << " mse " << l.mse << " nll " << l.nll << " lr " << l.lr
              << "\n";
  });
  if (!cfg.value("name", std::string()).empty()) model->metadata()["name"] = cfg.at("name");
  model->save(require(cfg, "out"), model->metadata().value("train_steps", std::int64_t{0}),
              {{"last_train_config", tc.to_json()}, {"mixture", mixture}});
  return 0;
}

int run_evaluate(const json& cfg) {
  const auto records = load_scenarios(require(cfg, "data"));
  EvalOptions o;
  o.conditions = parse_conditions_policy(cfg.value("conditions", std::string("none")));
  o.seed = cfg.value("seed", std::uint64_t{0});
  o.refine = cfg.value("refine", true);
  o.average = cfg.value("average", std::string("trajectory")) == "endpoint" ? KinematicAverage::Endpoint
                                                                             : KinematicAverage::Trajectory;
  std::vector<EvalReport> reports;
  if (cfg.contains("checkpoint") && !cfg.at("checkpoint").get<std::string>().empty()) {
    const ExpertModel model = ExpertModel::load(cfg.at("checkpoint").get<std::string>());
    reports.push_back(evaluate(model, records, o));
  }
  if (cfg.value("constant_velocity", false)) reports.push_back(evaluate_constant_velocity(records, o.average));
  if (reports.empty()) throw ValidationError("nothing to evaluate: pass --checkpoint or --constant-velocity true");
  const json report = merge_reports(reports);
  if (cfg.contains("out") && !cfg.at("out").get<std::string>().empty()) {
    write_json(cfg.at("out").get<std::string>(), report);
  } else {
    std::cout << report.dump(2) << "\n";
  }
  return 0;
}

int run_generate(const json& cfg) {
  const auto moe = load_experts(cfg);
  const auto scenes = load_scenarios(require(cfg, "scenario"));
  const std::size_t index = cfg.value("index", std::size_t{0});
  if (index >= scenes.size()) throw NotFoundError("scenario index " + std::to_string(index) + " out of range");
  ConditionMap conditions;
  if (cfg.contains("conditions") && !cfg.at("conditions").get<std::string>().empty()) {
    std::ifstream in(cfg.at("conditions").get<std::string>());
    if (!in) throw NotFoundError("cannot open conditions file");
    conditions = conditions_from_json(json::parse(in));
  }
  const std::uint64_t seed = cfg.value("seed", std::uint64_t{0});
  const std::size_t interval = cfg.value("interval", std::size_t{0});
  const SceneRollout r = interval == 0 ? moe->generate(scenes[index], conditions, seed)
                                       : moe->rollout_closed_loop(scenes[index], conditions,
                                                                  cfg.value("horizon", std::size_t{180}), interval, seed);
  const json out = rollout_to_json(r);
  if (cfg.contains("out") && !cfg.at("out").get<std::string>().empty()) {
    write_json(cfg.at("out").get<std::string>(), out);
  } else {
    std::cout << out.dump(2) << "\n";
  }
  return 0;
}

int run_serve(const json& cfg) {
  const auto moe = load_experts(cfg);
  SessionManager sessions(moe, cfg.value("tolerance", 5.0));
  ApiServer server(sessions);
  const std::string host = cfg.value("host", std::string("127.0.0.1"));
  const int port = cfg.value("port", 8080);
  std::cerr << "serving on http://" << host << ":" << port << "\n";
  server.listen(host, port);
  return 0;
}

int run_inspect(const json& cfg) {
  const auto scenes = load_scenarios(require(cfg, "in"));
  const bool full = cfg.value("full", false);
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const Scenario& s = scenes[i];
    const std::string id = cfg.value("id", std::string());
    if (!id.empty() && id != s.id) continue;
    if (full) {
      std::cout << scenario_to_json(s).dump(2) << "\n";
      continue;
    }
    std::map<AgentType, int> counts;
    for (const Agent& a : s.agents) ++counts[a.type];
    std::printf("%s  agents=%zu (veh %d, ped %d, cyc %d)  lanes=%zu segments=%zu  history=%zu  ego=%lld\n",
                s.id.c_str(), s.agents.size(), counts[AgentType::Vehicle], counts[AgentType::Pedestrian],
                counts[AgentType::Cyclist], s.map.lanes.size(), s.map.segment_count(),
                s.agents.empty() ? std::size_t{0} : s.agents.front().history.size(), static_cast<long long>(s.ego_id));
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Condition-guided traffic scene generation"};
  app.require_subcommand(1);

  Command synth = make_command(app, "synth", "Generate synthetic scenarios", SynthConfig{}.to_json());
  synth.defaults["out"] = "";
  for (const char* k : {"seed", "count", "agents_per_scene", "frames", "intersection_fraction", "speed_noise", "out"}) {
    synth.flag(k, "");
  }

  Command pre = make_command(app, "preprocess", "Window, filter and crop raw scenarios",
                             {{"in", ""}, {"out_dir", ""}, {"window_steps", kFutureSteps}, {"min_agents", kMaxAgents},
                              {"min_valid_frames", 30}, {"crop_half", kCropHalfExtent}});
  for (const char* k : {"in", "out_dir", "window_steps", "min_agents", "min_valid_frames", "crop_half"}) pre.flag(k, "");

  Command split = make_command(app, "split", "Split records 80/10/10 by source",
                               {{"in", ""}, {"out_dir", ""}, {"seed", 0}, {"ratios", {0.8, 0.1, 0.1}}});
  for (const char* k : {"in", "out_dir", "seed", "ratios"}) split.flag(k, "");

  json train_defaults = TrainConfig{}.to_json();
  train_defaults.update({{"data", ""}, {"out", ""}, {"init", ""}, {"type", "vehicle"}, {"mixture", false},
                         {"name", ""}, {"model_seed", 0}});
  train_defaults["epochs"] = 0;
  Command trn = make_command(app, "train", "Train one expert stage", train_defaults);
  for (const char* k : {"data", "out", "init", "stage", "epochs", "batch_size", "lr_start", "lr_end", "seed", "type",
                        "condition_dropout", "mixture", "name", "model_seed"}) {
    trn.flag(k, "");
  }

  Command eval = make_command(app, "evaluate", "Score a checkpoint on held-out records",
                              {{"data", ""}, {"checkpoint", ""}, {"conditions", "none"}, {"seed", 0}, {"refine", true},
                               {"constant_velocity", false}, {"average", "trajectory"}, {"out", ""}});
  for (const char* k : {"data", "checkpoint", "conditions", "seed", "refine", "constant_velocity", "average", "out"}) {
    eval.flag(k, "");
  }

  Command gen = make_command(app, "generate", "Generate futures for one scenario",
                             {{"checkpoints", json::array()}, {"scenario", ""}, {"index", 0}, {"conditions", ""},
                              {"seed", 0}, {"interval", 0}, {"horizon", 180}, {"out", ""}});
  for (const char* k : {"checkpoints", "scenario", "index", "conditions", "seed", "interval", "horizon", "out"}) {
    gen.flag(k, "");
  }

  Command serve = make_command(app, "serve", "Run the editing service",
                               {{"checkpoints", json::array()}, {"host", "127.0.0.1"}, {"port", 8080}, {"tolerance", 5.0}});
  for (const char* k : {"checkpoints", "host", "port", "tolerance"}) serve.flag(k, "");

  Command inspect = make_command(app, "inspect", "Summarise a scenario file", {{"in", ""}, {"id", ""}, {"full", false}});
  for (const char* k : {"in", "id", "full"}) inspect.flag(k, "");

  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<Command*, int (*)(const json&)>> table{
      {&synth, run_synth}, {&pre, run_preprocess}, {&split, run_split},  {&trn, run_train},
      {&eval, run_evaluate}, {&gen, run_generate}, {&serve, run_serve}, {&inspect, run_inspect}};
  for (const auto& [cmd, fn] : table) {
    if (!cmd->app->parsed()) continue;
    try {
      const json cfg = cmd->resolve();
      log_config(cmd->app->get_name(), cfg);
      return fn(cfg);
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << "\n";
      return 1;
    }
  }
  return 1;
}
