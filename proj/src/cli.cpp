#include "latinv/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <csignal>
#include <cmath>
#include <optional>
#include <sstream>

#include "latinv/checkpoint.hpp"
#include "latinv/errors.hpp"
#include "latinv/image.hpp"
#include "latinv/nn.hpp"
#include "latinv/pipeline.hpp"
#include "latinv/service.hpp"
#include "latinv/training.hpp"

namespace latinv {

namespace {

nlohmann::json read_json(const std::string& path) {
  try {
    return nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ArgumentError("'" + path + "' is not valid JSON: " + e.what());
  }
}

void write_json(const std::string& path, const nlohmann::json& j) { write_text_file(path, j.dump(2) + "\n"); }

void write_png(const std::string& path, const Image& image) { write_file(path, encode_png(image)); }

Image read_png(const std::string& path) { return decode_png(read_file(path)); }

Models load_models(const std::string& path) { return models_from_bundle(load_checkpoint(path)); }

EditDirection find_direction(const std::string& catalog_path, const std::string& name, const Models& models) {
  const auto catalog = directions_from_json(read_json(catalog_path), models.config.generator.style_count());
  for (const auto& d : catalog)
    if (d.name == name) return d;
  throw ArgumentError("direction '" + name + "' not found in " + catalog_path);
}

std::vector<double> parse_grid(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const double v = std::stod(item, &used);
      if (used != item.size() || !std::isfinite(v)) throw std::invalid_argument(item);
      out.push_back(v);
    } catch (const std::exception&) {
      throw ArgumentError("grid entry '" + item + "' is not a number");
    }
  }
  if (out.empty()) throw ArgumentError("grid must list at least one value");
  return out;
}

std::vector<LatentCode> read_codes(const std::string& path) {
  const auto j = read_json(path);
  if (!j.is_array()) throw ArgumentError("'" + path + "' must hold a JSON array of latent codes");
  std::vector<LatentCode> codes;
  for (const auto& c : j) codes.push_back(latent_from_json(c));
  return codes;
}

// Training run settings read from the --config file.
struct TrainFile {
  ModelConfig model;
  TrainingStage stage;
  LossWeights weights;
  int dataset_count = 64;
  std::uint64_t dataset_seed = 100;
  std::string perceptual = "random-conv";
  std::string identity = "random-conv";
  std::uint64_t plugin_seed = 7;
  std::uint64_t seed = 5;
};

TrainFile train_file_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("training config must be a JSON object");
  TrainFile t;
  try {
    if (j.contains("model")) t.model = model_config_from_json(j.at("model"));
    t.model = resolve_model_config(t.model);
    if (j.contains("stage")) {
      const auto& s = j.at("stage");
      t.stage.steps = s.value("steps", t.stage.steps);
      t.stage.learning_rate = s.value("learning_rate", t.stage.learning_rate);
      t.stage.batch_size = s.value("batch_size", t.stage.batch_size);
      t.stage.plateau_window = s.value("plateau_window", t.stage.plateau_window);
      t.stage.plateau_tolerance = s.value("plateau_tolerance", t.stage.plateau_tolerance);
    }
    if (j.contains("loss_weights")) {
      const auto& w = j.at("loss_weights");
      t.weights.lambda1 = w.value("lambda1", t.weights.lambda1);
      t.weights.lambda2 = w.value("lambda2", t.weights.lambda2);
      t.weights.lambda3 = w.value("lambda3", t.weights.lambda3);
      t.weights.lambda4 = w.value("lambda4", t.weights.lambda4);
    }
    if (j.contains("dataset")) {
      t.dataset_count = j.at("dataset").value("count", t.dataset_count);
      t.dataset_seed = j.at("dataset").value("seed", t.dataset_seed);
    }
    if (j.contains("plugins")) {
      const auto& p = j.at("plugins");
      t.perceptual = p.value("perceptual", t.perceptual);
      t.identity = p.value("identity", t.identity);
      t.plugin_seed = p.value("seed", t.plugin_seed);
    }
    t.seed = j.value("seed", t.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("training config: ") + e.what());
  }
  t.model.validate();
  t.weights.validate();
  if (t.stage.steps < 1 || t.stage.batch_size < 1 || !(t.stage.learning_rate > 0.0))
    throw ConfigError("training config: steps, batch_size and learning_rate must be positive");
  return t;
}

Service* g_serving = nullptr;

void stop_serving(int) {
  if (g_serving) g_serving->stop();
}

}  // namespace

int cli_dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Encoder-based GAN inversion with latent tokens and SMART refinement", "latinv"};
  app.require_subcommand(1);
  int status = 0;

  // train
  std::string stage_name, config_path, out_path, init_path, trace_path;
  std::optional<long> steps_override;
  auto* train_cmd = app.add_subcommand("train", "Train the encoder (baseline) or the SMART block (smart)");
  train_cmd->add_option("--stage", stage_name, "baseline or smart")->required()->check(CLI::IsMember({"baseline", "smart"}));
  train_cmd->add_option("--config", config_path, "Training config JSON")->required();
  train_cmd->add_option("--out", out_path, "Output checkpoint")->required();
  train_cmd->add_option("--init", init_path, "Starting checkpoint (required for smart)");
  train_cmd->add_option("--trace", trace_path, "Write the per-step loss trace as CSV");
  train_cmd->add_option("--steps", steps_override, "Override the configured step count");

  // invert
  std::string ckpt, in_path, baseline_out, latents_out;
  double beta1 = 1.0, beta2 = 1.0;
  auto add_beta = [&](CLI::App* c) {
    c->add_option("--beta1", beta1, "Attention-branch weight")->capture_default_str();
    c->add_option("--beta2", beta2, "FFN-branch weight")->capture_default_str();
  };
  auto* invert_cmd = app.add_subcommand("invert", "Invert an image");
  invert_cmd->add_option("--ckpt", ckpt)->required();
  invert_cmd->add_option("--in", in_path)->required();
  invert_cmd->add_option("--out", out_path, "Refined reconstruction PNG")->required();
  add_beta(invert_cmd);
  invert_cmd->add_option("--baseline-out", baseline_out, "Unrefined reconstruction PNG");
  invert_cmd->add_option("--latents-out", latents_out, "Inverted latent code JSON");

  // edit
  std::string dir_name, catalog_path, flow_path;
  double alpha = 0.0;
  auto* edit_cmd = app.add_subcommand("edit", "Invert an image and apply an edit direction");
  edit_cmd->add_option("--ckpt", ckpt)->required();
  edit_cmd->add_option("--in", in_path)->required();
  edit_cmd->add_option("--out", out_path)->required();
  edit_cmd->add_option("--dir", dir_name, "Direction name")->required();
  edit_cmd->add_option("--directions", catalog_path, "Direction catalog JSON")->required();
  edit_cmd->add_option("--alpha", alpha)->required();
  add_beta(edit_cmd);
  edit_cmd->add_option("--flow", flow_path, "Offset field JSON at the SMART layer resolution");

  // mix
  std::string source_path, reference_path, mode_name;
  double param = 0.0;
  bool no_smart = false;
  auto* mix_cmd = app.add_subcommand("mix", "Style-mix two images");
  mix_cmd->add_option("--ckpt", ckpt)->required();
  mix_cmd->add_option("--source", source_path)->required();
  mix_cmd->add_option("--reference", reference_path)->required();
  mix_cmd->add_option("--out", out_path)->required();
  mix_cmd->add_option("--mode", mode_name)->required()->check(CLI::IsMember({"progressive", "exchange", "interpolate"}));
  mix_cmd->add_option("--param", param, "k for progressive/exchange, sigma for interpolate")->required();
  mix_cmd->add_flag("--no-smart", no_smart, "Skip SMART refinement");

  // metrics
  std::string codes_path, refs_path, table_path;
  int table_first = 0, table_last = -1;
  auto* metrics_cmd = app.add_subcommand("metrics", "Disentanglement metrics over latent codes");
  metrics_cmd->add_option("--codes", codes_path, "JSON array of latent codes")->required();
  metrics_cmd->add_option("--refs", refs_path, "JSON array of W-space reference codes");
  metrics_cmd->add_option("--table", table_path, "Write the first code's correlation table as CSV");
  metrics_cmd->add_option("--first", table_first, "First channel of the table");
  metrics_cmd->add_option("--last", table_last, "One past the last channel of the table");

  // complexity
  std::string kind_name;
  std::uint64_t h = 0, w = 0, C = 0, M = 0, T = 0;
  auto* complexity_cmd = app.add_subcommand("complexity", "Attention cost in multiply-accumulates");
  complexity_cmd->set_help_flag("--help", "Print this help message and exit");
  complexity_cmd->add_option("--kind", kind_name, "msa, w-msa or w-msa*")->required();
  complexity_cmd->add_option("--h", h)->required();
  complexity_cmd->add_option("--w", w)->required();
  complexity_cmd->add_option("--C", C)->required();
  complexity_cmd->add_option("--M", M, "Window size (windowed kinds)");
  complexity_cmd->add_option("--T", T, "Latent tokens (w-msa*)");

  // beta-sweep
  std::string grid1, grid2;
  auto* sweep_cmd = app.add_subcommand("beta-sweep", "Render a grid over (beta1, beta2)");
  sweep_cmd->add_option("--ckpt", ckpt)->required();
  sweep_cmd->add_option("--in", in_path)->required();
  sweep_cmd->add_option("--out", out_path, "Tiled grid PNG, rows follow beta1")->required();
  sweep_cmd->add_option("--grid", grid1, "Comma-separated beta1 values")->required();
  sweep_cmd->add_option("--grid2", grid2, "Comma-separated beta2 values (defaults to --grid)");
  sweep_cmd->add_option("--dir", dir_name);
  sweep_cmd->add_option("--directions", catalog_path);
  sweep_cmd->add_option("--alpha", alpha);

  // serve
  auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP service");
  serve_cmd->add_option("--config", config_path, "Service config JSON")->required();

  // sample
  std::uint64_t sample_seed = 0;
  int count = 1;
  auto* sample_cmd = app.add_subcommand("sample", "Generator samples from random z");
  sample_cmd->add_option("--ckpt", ckpt)->required();
  sample_cmd->add_option("--out", out_path, "PNG path; with --count > 1, '{}' is replaced by the index")->required();
  sample_cmd->add_option("--seed", sample_seed);
  sample_cmd->add_option("--count", count)->check(CLI::PositiveNumber);
  sample_cmd->add_option("--latents-out", latents_out, "JSON array of the sampled codes");

  // directions
  auto* dirs_cmd = app.add_subcommand("directions", "Write a catalog of random unit W-space directions");
  dirs_cmd->add_option("--ckpt", ckpt)->required();
  dirs_cmd->add_option("--out", out_path)->required();
  dirs_cmd->add_option("--count", count)->check(CLI::PositiveNumber);
  dirs_cmd->add_option("--seed", sample_seed);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (*train_cmd) {
      TrainFile tf = train_file_from_json(read_json(config_path));
      if (steps_override) tf.stage.steps = *steps_override;
      tf.stage.kind = stage_kind_from_string(stage_name);
      if (tf.stage.kind == TrainingStage::Kind::SMART && init_path.empty())
        throw ArgumentError("train --stage smart needs --init with a baseline checkpoint");
      Models models = init_path.empty() ? make_models(tf.model) : load_models(init_path);
      const Dataset data = make_self_inversion_dataset(models.generator, tf.dataset_count, tf.dataset_seed);
      LossPlugins plugins{make_feature_extractor(tf.perceptual, tf.plugin_seed),
                          make_embedder(tf.identity, tf.plugin_seed + 1)};
      const TrainResult r = train(tf.stage, data, models, tf.weights, plugins, tf.seed);
      save_checkpoint(bundle_from_models(models), out_path);
      if (!trace_path.empty()) write_text_file(trace_path, trace_csv(r.trace));
      const long window = std::min<long>(16, static_cast<long>(r.trace.size()));
      out << nlohmann::json{{"steps", r.trace.size()},
                            {"early_stopped", r.early_stopped},
                            {"initial_loss", smoothed_loss(r.trace, 0, window)},
                            {"final_loss", smoothed_loss(r.trace, -window, window)}}
                 .dump()
          << "\n";
    } else if (*invert_cmd) {
      const Models models = load_models(ckpt);
      const InversionResult inv = invert(read_png(in_path), models, {beta1, beta2});
      write_png(out_path, inv.image_refined);
      if (!baseline_out.empty()) write_png(baseline_out, inv.image_baseline);
      if (!latents_out.empty()) write_json(latents_out, to_json(inv.w_inv));
    } else if (*edit_cmd) {
      const Models models = load_models(ckpt);
      const EditDirection dir = find_direction(catalog_path, dir_name, models);
      const InversionResult inv = invert(read_png(in_path), models, {beta1, beta2});
      const Image img = flow_path.empty()
                            ? edit(inv, dir, alpha, {beta1, beta2}, models)
                            : pose_edit(inv, dir, alpha, flow_from_json(read_json(flow_path)), {beta1, beta2}, models);
      write_png(out_path, img);
    } else if (*mix_cmd) {
      const Models models = load_models(ckpt);
      write_png(out_path, mix(read_png(source_path), read_png(reference_path), mix_mode_from_string(mode_name), param,
                              models, !no_smart));
    } else if (*metrics_cmd) {
      const auto codes = read_codes(codes_path);
      if (codes.empty()) throw ArgumentError("codes file is empty");
      nlohmann::json result{{"dispersion", dispersion(codes)}};
      if (!refs_path.empty()) result["distance_to_w"] = distance_to_w(codes, read_codes(refs_path));
      if (!table_path.empty()) {
        if (refs_path.empty()) throw ArgumentError("--table needs --refs");
        const auto refs = read_codes(refs_path);
        const int last = table_last < 0 ? codes.front().channels() : table_last;
        write_text_file(table_path, correlation_csv(layer_correlation_table(codes.front(), refs.front(), table_first, last)));
      }
      out << result.dump() << "\n";
    } else if (*complexity_cmd) {
      out << complexity(attention_kind_from_string(kind_name), h, w, C, M, T) << "\n";
    } else if (*sweep_cmd) {
      const Models models = load_models(ckpt);
      const auto b1 = parse_grid(grid1);
      const auto b2 = grid2.empty() ? b1 : parse_grid(grid2);
      std::optional<EditDirection> dir;
      if (!dir_name.empty()) {
        if (catalog_path.empty()) throw ArgumentError("--dir needs --directions");
        dir = find_direction(catalog_path, dir_name, models);
      }
      const InversionResult inv = invert(read_png(in_path), models);
      const auto grid = beta_sweep(inv, dir, alpha, b1, b2, models);
      std::vector<Image> tiles;
      for (const auto& row : grid) tiles.insert(tiles.end(), row.begin(), row.end());
      write_png(out_path, tile_images(tiles, static_cast<int>(b2.size())));
    } else if (*serve_cmd) {
      ServiceConfig cfg;
      try {
        cfg = apply_env_overrides(service_config_from_json(read_json(config_path)));
      } catch (const ConfigError& e) {
        throw ArgumentError(e.what());
      }
      auto service = Service::from_config(cfg);
      g_serving = service.get();
      std::signal(SIGINT, stop_serving);
      std::signal(SIGTERM, stop_serving);
      err << "serving on " << cfg.bind << ":" << cfg.port << "\n";
      const bool ok = service->run();
      g_serving = nullptr;
      if (!ok) throw Error("cannot listen on " + cfg.bind + ":" + std::to_string(cfg.port));
    } else if (*sample_cmd) {
      const Models models = load_models(ckpt);
      const auto& gen = models.generator;
      Rng rng(sample_seed);
      nlohmann::json codes = nlohmann::json::array();
      for (int i = 0; i < count; ++i) {
        const LatentCode code = gen.broadcast_w(gen.map_z_to_w(standard_normal(gen.config().z_dim, rng)));
        std::string path = out_path;
        if (const auto at = path.find("{}"); at != std::string::npos) path.replace(at, 2, std::to_string(i));
        else if (count > 1) throw ArgumentError("--count > 1 needs '{}' in --out");
        write_png(path, gen.synthesize(code));
        codes.push_back(to_json(code));
      }
      if (!latents_out.empty()) write_json(latents_out, codes);
    } else if (*dirs_cmd) {
      const Models models = load_models(ckpt);
      const auto& g = models.config.generator;
      Rng rng(sample_seed);
      std::vector<EditDirection> catalog;
      for (int i = 0; i < count; ++i) {
        auto v = standard_normal(g.w_dim, rng);
        double n = 0;
        for (double x : v) n += x * x;
        n = std::sqrt(n);
        for (double& x : v) x /= n;
        catalog.push_back({"random" + std::to_string(i), LatentCode::broadcast(v, g.style_count())});
      }
      write_json(out_path, directions_to_json(catalog));
    }
  } catch (const ArgumentError& e) {
    err << "error: " << e.what() << "\n";
    status = 2;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    status = 2;
  } catch (const DimensionError& e) {
    err << "error: " << e.what() << "\n";
    status = 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    status = 1;
  }
  return status;
}

}  // namespace latinv
