#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "masrc/masrc.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace masrc;

namespace {

constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<std::string> modality;
  bool no_eld = false;
  bool no_psd = false;
  std::optional<std::string> regime;
  std::optional<double> threshold;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "JSON config file");
  cmd->add_option("--seed", f.seed, "random seed");
  cmd->add_option("--out", f.out, "output location");
  cmd->add_option("--modality", f.modality, "entity, place or both")
      ->check(CLI::IsMember({"entity", "place", "both"}));
  cmd->add_flag("--no-eld", f.no_eld, "disable the long-range graph");
  cmd->add_flag("--no-psd", f.no_psd, "disable the short-range graph");
  cmd->add_option("--regime", f.regime, "supervised, self_supervised or transfer")
      ->check(CLI::IsMember({"supervised", "self_supervised", "transfer"}));
  cmd->add_option("--threshold", f.threshold, "binarization threshold for F1 and mIoU");
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("missing config file '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError("config file '" + path + "': " + e.what());
  }
}

template <typename T>
T config_from(const std::string& path) {
  if (path.empty()) return T{};
  try {
    return read_json_file(path).get<T>();
  } catch (const json::exception& e) {
    throw ValidationError("config file '" + path + "': " + e.what());
  }
}

// Flags override config-file fields, which override defaults.
TrainConfig resolve_train_config(const CommonFlags& f) {
  TrainConfig c = config_from<TrainConfig>(f.config);
  if (f.seed) c.seed = *f.seed;
  if (f.modality) c.model.modality = parse_modality(*f.modality);
  if (f.no_eld) c.model.eld = false;
  if (f.no_psd) c.model.psd = false;
  if (f.regime) c.regime = parse_regime(*f.regime);
  if (f.threshold) c.threshold = *f.threshold;
  validate(c);
  return c;
}

// Builds <target> in a sibling temporary directory and renames it into place.
template <typename F>
void write_dir_atomically(const fs::path& target, F&& fill) {
  if (target.empty()) throw ValidationError("--out is required");
  const fs::path parent = target.has_parent_path() ? target.parent_path() : fs::path(".");
  std::error_code ec;
  fs::create_directories(parent, ec);
  if (ec) throw ValidationError("cannot create '" + parent.string() + "': " + ec.message());
  std::random_device rd;
  const fs::path tmp = parent / ("." + target.filename().string() + ".tmp" + std::to_string(rd()));
  fs::create_directories(tmp, ec);
  if (ec) throw ValidationError("cannot write to '" + parent.string() + "': " + ec.message());
  try {
    fill(tmp);
    if (fs::exists(target)) fs::remove_all(target);
    fs::rename(tmp, target);
  } catch (...) {
    fs::remove_all(tmp, ec);
    throw;
  }
}

void write_file_atomically(const fs::path& target, const std::string& text) {
  if (target.empty()) throw ValidationError("--out is required");
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ValidationError("cannot write '" + target.string() + "'");
    out << text;
    if (!out) throw ValidationError("failed writing '" + target.string() + "'");
  }
  fs::rename(tmp, target);
}

struct LoadedModel {
  Model model;
  ParamStore<float> params;
};

LoadedModel load_model(const std::string& checkpoint, const std::vector<ShotSequence>& data) {
  require(!data.empty(), "dataset is empty");
  const auto ck = read_checkpoint(checkpoint);
  json meta;
  try {
    meta = json::parse(ck.meta);
  } catch (const json::exception& e) {
    throw ValidationError("checkpoint '" + checkpoint + "' has unreadable metadata: " + e.what());
  }
  const auto cfg = meta.value("model", json::object()).get<ModelConfig>();
  Model model(cfg, data.front().dim_entity(), data.front().dim_place());
  ParamStore<float> params = model.make_layout<float>();
  load_into(ck, params);
  return {std::move(model), std::move(params)};
}

int cmd_synth(const CommonFlags& f) {
  const SynthConfig c = config_from<SynthConfig>(f.config);
  const std::uint64_t seed = f.seed.value_or(0);
  const auto videos = synth_generate(c, seed);
  const fs::path out(f.out);
  write_dir_atomically(out, [&](const fs::path& dir) { write_dataset(dir, videos); });
  std::size_t shots = 0;
  for (const auto& v : videos) shots += v.num_shots();
  std::cout << json{{"manifest", (out / "manifest.jsonl").string()},
                    {"videos", videos.size()},
                    {"shots", shots},
                    {"boundary_rate", boundary_rate(videos)}}
                   .dump()
            << "\n";
  return 0;
}

int cmd_train(const CommonFlags& f, const std::string& train_manifest, const std::string& val_manifest) {
  const TrainConfig cfg = resolve_train_config(f);
  const auto train_set = load_dataset(train_manifest);
  const auto val_set = val_manifest.empty() ? std::vector<ShotSequence>{} : load_dataset(val_manifest);
  const auto result = train(train_set, val_set, cfg);
  const Model model(cfg.model, train_set.front().dim_entity(), train_set.front().dim_place());
  const fs::path out(f.out);
  write_dir_atomically(out, [&](const fs::path& dir) {
    save_checkpoint(dir / "checkpoint.bin", result.params, model.meta_json());
    std::ofstream log(dir / "metrics.jsonl");
    for (const auto& e : result.log) log << to_json(e).dump() << "\n";
    json resolved = cfg;
    std::ofstream(dir / "config.json") << resolved.dump(2) << "\n";
  });
  std::cout << (out / "checkpoint.bin").string() << "\n";
  std::cerr << "best epoch " << result.best_epoch << ", validation AP " << result.best_val_ap << "\n";
  return 0;
}

json metrics_json(const metrics::SplitMetrics& m) {
  json videos = json::array();
  for (const auto& v : m.videos)
    videos.push_back({{"video_id", v.video_id}, {"ap", v.ap}, {"miou", v.miou}, {"f1", v.f1}});
  return {{"ap", m.ap}, {"miou", m.miou}, {"f1", m.f1}, {"ap_video_mean", m.ap_video_mean}, {"videos", videos}};
}

// "name=path" or a bare path named after its directory.
std::pair<std::string, std::string> split_spec(const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq != std::string::npos) return {spec.substr(0, eq), spec.substr(eq + 1)};
  const fs::path p(spec);
  const auto dir = p.parent_path().filename().string();
  return {dir.empty() ? p.stem().string() : dir, spec};
}

int cmd_eval(const CommonFlags& f, const std::string& checkpoint, const std::vector<std::string>& specs) {
  const double threshold = f.threshold.value_or(0.5);
  const std::size_t threads = resolve_threads(0);
  json out = json::object();
  for (const auto& spec : specs) {
    const auto [name, path] = split_spec(spec);
    const auto data = load_dataset(path);
    const auto lm = load_model(checkpoint, data);
    const auto r = evaluate(lm.model, lm.params, data, Target::labels, threshold, threads);
    out[name] = metrics_json(r.metrics);
  }
  const std::string text = out.dump(2) + "\n";
  if (!f.out.empty()) write_file_atomically(f.out, text);
  std::cout << text;
  return 0;
}

int cmd_predict(const CommonFlags& f, const std::string& checkpoint, const std::string& manifest) {
  const double threshold = f.threshold.value_or(0.5);
  const auto data = load_dataset(manifest);
  const auto lm = load_model(checkpoint, data);
  const std::size_t threads = resolve_threads(0);
  std::string text;
  for (const auto& seq : data) {
    const auto scores = predict_video(lm.model, lm.params, seq, threads);
    const auto boundaries = metrics::binarize(scores, threshold);
    json scenes = json::array();
    for (const auto& [s, e] : metrics::boundaries_to_scenes(boundaries).scenes) scenes.push_back({s, e});
    json line{{"video_id", seq.video_id}, {"scores", scores}, {"boundaries", boundaries}, {"scenes", scenes}};
    if (seq.labels) line["labels"] = *seq.labels;
    text += line.dump() + "\n";
  }
  write_file_atomically(f.out, text);
  std::cout << f.out << "\n";
  return 0;
}

int cmd_gradcheck(const CommonFlags& f, std::size_t seeds, std::size_t samples, std::size_t dim) {
  const TrainConfig cfg = resolve_train_config(f);
  ModelCheckOptions opt;
  opt.model = cfg.model;
  opt.dim = dim;
  opt.check.max_entries_per_slot = samples;
  bool ok = true;
  const std::uint64_t first = f.seed.value_or(1);
  for (std::uint64_t s = first; s < first + seeds; ++s) {
    const auto r = check_model_gradients(opt, s);
    for (const auto& sc : r.report.slots) {
      std::printf("seed %llu %-18s %s max_rel %.3e dir_rel %.3e checked %zu/%zu excluded %zu\n",
                  static_cast<unsigned long long>(s), sc.name.c_str(), sc.passed ? "ok  " : "FAIL",
                  sc.max_rel_error, sc.directional_rel_error, sc.checked, sc.size, sc.excluded);
    }
    ok = ok && r.report.passed();
  }
  std::printf("%s\n", ok ? "gradcheck passed" : "gradcheck FAILED");
  return ok ? 0 : kExitRuntime;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MASRC scene boundary detection"};
  app.require_subcommand(1);

  CommonFlags synth_f, train_f, eval_f, predict_f, grad_f;

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  add_common(synth, synth_f);

  auto* train_cmd = app.add_subcommand("train", "train a model");
  add_common(train_cmd, train_f);
  std::string train_manifest, val_manifest;
  train_cmd->add_option("--train", train_manifest, "training manifest")->required();
  train_cmd->add_option("--val", val_manifest, "validation manifest");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(eval, eval_f);
  std::string eval_ckpt;
  std::vector<std::string> eval_data;
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
  eval->add_option("--data", eval_data, "manifest, optionally as name=path; repeatable")->required();

  auto* predict = app.add_subcommand("predict", "write per-shot scores and scenes");
  add_common(predict, predict_f);
  std::string predict_ckpt, predict_data;
  predict->add_option("--checkpoint", predict_ckpt, "checkpoint file")->required();
  predict->add_option("--data", predict_data, "manifest")->required();

  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of every parameter");
  add_common(grad, grad_f);
  std::size_t grad_seeds = 5, grad_samples = 512, grad_dim = 8;
  grad->add_option("--seeds", grad_seeds, "number of seeds");
  grad->add_option("--samples", grad_samples, "entries checked per large slot (0 = all)");
  grad->add_option("--dim", grad_dim, "feature width");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitValidation;
  }

  try {
    if (*synth) return cmd_synth(synth_f);
    if (*train_cmd) return cmd_train(train_f, train_manifest, val_manifest);
    if (*eval) return cmd_eval(eval_f, eval_ckpt, eval_data);
    if (*predict) {
      if (predict_f.out.empty()) throw ValidationError("--out is required");
      return cmd_predict(predict_f, predict_ckpt, predict_data);
    }
    if (*grad) return cmd_gradcheck(grad_f, grad_seeds, grad_samples, grad_dim);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitValidation;
}
