// langxai: serve the API, run explanations, score texts, benchmark datasets.
// Exit status: 0 success, 1 domain error, 2 usage error.

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <csignal>
#include <cstdio>
#include <iostream>
#include <random>

#include <unistd.h>

#include "langxai/service.hpp"

using namespace langxai;

namespace {

constexpr int kUsageError = 2;
constexpr int kDomainError = 1;

struct Common {
  std::string config_file;
  std::string store;
  std::string models;
  std::string log_level = "warn";
};

ServiceConfig resolve_config(const Common& common) {
  ServiceConfig c = load_service_config(common.config_file);
  if (!common.store.empty()) c.store_root = common.store;
  if (!common.models.empty()) c.models_manifest = common.models;
  return c;
}

/// Registries, gateway and store for one command.
struct Bench {
  ModelRegistry models;
  MethodRegistry methods;
  LvmGateway gateway;
  std::unique_ptr<RunStore> store;
  PromptTemplate prompt_template;
  std::unique_ptr<Workbench> wb;

  Bench(const ServiceConfig& c, const fs::path& store_root)
      : prompt_template(c.prompt_template.empty() ? default_template()
                                                  : load_template(c.prompt_template)) {
    register_configured_models(models, c.models_manifest);
    register_default_methods(methods);
    register_default_providers(gateway);
    store = std::make_unique<RunStore>(store_root);
    wb = std::make_unique<Workbench>(Workbench{models, methods, gateway, *store, prompt_template});
  }
};

/// A fresh directory removed on scope exit.
struct TempDir {
  fs::path path;
  TempDir() {
    std::random_device rd;
    path = fs::temp_directory_path() /
           ("langxai-bench-" + std::to_string(::getpid()) + "-" + std::to_string(rd()));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

ImageSize parse_size(const std::string& text, const char* what) {
  const auto x = text.find('x');
  try {
    if (x != std::string::npos) {
      return {std::stoul(text.substr(0, x)), std::stoul(text.substr(x + 1))};
    }
  } catch (const std::exception&) {
  }
  throw CLI::ValidationError(what, "expected ROWSxCOLS, got '" + text + "'");
}

LvmConfig lvm_with_provider(LvmConfig base, const std::string& provider) {
  if (!provider.empty()) base.provider = provider;
  return base;
}

int cmd_serve(const Common& common, const std::string& host, int port) {
  ServiceConfig c = resolve_config(common);
  if (!host.empty()) c.host = host;
  if (port >= 0) c.port = port;
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);
  Service service(c);
  const int bound = service.start();
  std::cout << "listening on http://" << c.host << ":" << bound << "/api/v1" << std::endl;
  int sig = 0;
  sigwait(&signals, &sig);
  std::cout << "shutting down" << std::endl;
  service.stop();
  return 0;
}

struct ExplainArgs {
  std::string image, task, model, method, target, ground_truth, lvm;
  double alpha = 0.5;
};

int cmd_explain(const Common& common, const ExplainArgs& a) {
  const ServiceConfig c = resolve_config(common);
  Bench b(c, c.store_root);
  ExplanationRequest req;
  req.task = parse_task(a.task);
  req.model_id = a.model;
  req.method_id = a.method;
  req.image_ref = b.store->put(encode_png(load_png(a.image)));
  if (!a.target.empty()) req.target = parse_target_arg(a.target, req.task);
  if (!a.ground_truth.empty()) {
    req.ground_truth =
        parse_ground_truth_arg(a.ground_truth, req.task, b.models.descriptor(a.model).label_set);
  }
  req.lvm = lvm_with_provider(c.lvm, a.lvm);
  req.saliency.masks = c.masks;
  req.alpha = a.alpha;
  const ExplanationRecord r = run_explanation(req, *b.wb);
  std::cout << "record_id: " << r.record_id << "\n"
            << "verdict: " << to_string(r.verdict) << "\n"
            << "overlay: " << r.overlay_ref << "\n"
            << "explanation: " << r.explanation_text << "\n";
  return 0;
}

int cmd_eval(const std::string& pairs_file, const std::string& task_name) {
  const TaskKind task = parse_task(task_name);
  const Bytes bytes = read_file(pairs_file);
  const auto pairs = parse_pairs(std::string_view(reinterpret_cast<const char*>(bytes.data()),
                                                  bytes.size()),
                                 pairs_file);
  const MetricReport report = evaluate_pairs(pairs, task, HashingEmbedder{});
  std::cout << per_sample_csv(report) << "\n" << report_table({report});
  return 0;
}

struct BenchArgs {
  std::string manifest, dataset, format, model, method, lvm, out;
};

int cmd_bench(const Common& common, const BenchArgs& a) {
  const ServiceConfig c = resolve_config(common);
  BenchManifest plan;
  if (!a.manifest.empty()) {
    plan = load_bench_manifest(a.manifest);
  } else {
    DatasetManifest dataset;
    if (fs::is_directory(a.dataset)) {
      if (a.format.empty()) throw CLI::RequiredError("--format (with a dataset directory)");
      dataset = ingest_dataset(a.dataset, parse_dataset_format(a.format));
    } else {
      RunStore store(c.store_root);
      dataset = load_dataset(store, a.dataset);
    }
    plan.lvm = c.lvm;
    BenchRun run{std::move(dataset), a.model, a.method, std::nullopt};
    run.masks = c.masks;
    plan.runs.push_back(std::move(run));
  }
  plan.lvm = lvm_with_provider(plan.lvm, a.lvm);
  TempDir scratch;
  Bench b(c, scratch.path);
  const std::string text = bench_report_text(run_bench(plan.runs, plan.lvm, *b.wb, HashingEmbedder{}));
  if (!a.out.empty()) write_file(a.out, as_bytes(text));
  std::cout << text;
  return 0;
}

int cmd_masks(const std::string& grid, std::size_t n, std::uint64_t seed, double keep_prob,
              const std::string& size, const std::string& out) {
  const MaskSet set = generate_masks(n, parse_size(grid, "--grid"), keep_prob,
                                     parse_size(size, "--size"), seed);
  save_masks(set, out);
  std::cout << "wrote " << set.count << " masks of " << set.height << "x" << set.width << " to "
            << out << "\n";
  return 0;
}

int cmd_ingest(const Common& common, const std::string& root, const std::string& format,
               const std::string& id) {
  const ServiceConfig c = resolve_config(common);
  const DatasetManifest m = ingest_dataset(root, parse_dataset_format(format), id);
  RunStore store(c.store_root);
  persist_dataset(store, m);
  std::cout << "dataset_id: " << m.dataset_id << "\n"
            << "task: " << to_string(m.task) << "\n"
            << "items: " << m.items.size() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"langxai: saliency explanations narrated by a vision-language model"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);

  Common common;
  app.add_option("--config", common.config_file, "JSON configuration file")->check(CLI::ExistingFile);
  app.add_option("--store", common.store, "Run store directory");
  app.add_option("--models", common.models, "Model plugin manifest (JSON)")->check(CLI::ExistingFile);
  app.add_option("--log-level", common.log_level, "trace|debug|info|warn|error|off")
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "critical", "off"}));

  std::string host;
  int port = -1;
  auto* serve = app.add_subcommand("serve", "Run the HTTP API");
  serve->add_option("--host", host, "Listen address");
  serve->add_option("--port", port, "Listen port (0: any free port)")->check(CLI::Range(0, 65535));

  ExplainArgs ex;
  auto* explain = app.add_subcommand("explain", "Explain one image and print the record");
  explain->add_option("--image", ex.image, "PNG image")->required()->check(CLI::ExistingFile);
  explain->add_option("--task", ex.task, "classification|segmentation|detection")
      ->required()
      ->check(CLI::IsMember({"classification", "segmentation", "detection"}));
  explain->add_option("--model", ex.model, "Model id")->required();
  explain->add_option("--method", ex.method, "Saliency method id")->required();
  explain->add_option("--target", ex.target, "Class id, detection index or JSON target");
  explain->add_option("--ground-truth", ex.ground_truth,
                      "Class id or label, mask PNG, JSON file or inline JSON");
  explain->add_option("--lvm", ex.lvm, "LVM provider (mock, openai, ...)");
  explain->add_option("--alpha", ex.alpha, "Overlay opacity")->check(CLI::Range(0.0, 1.0));

  std::string pairs, eval_task;
  auto* eval = app.add_subcommand("eval", "Score hypothesis/reference pairs");
  eval->add_option("--pairs", pairs, "JSON-lines pair file")->required()->check(CLI::ExistingFile);
  eval->add_option("--task", eval_task, "Task whose pairs are scored")
      ->required()
      ->check(CLI::IsMember({"classification", "segmentation", "detection"}));

  BenchArgs bench_args;
  auto* bench = app.add_subcommand("bench", "Explain and score every item of a dataset");
  auto* manifest_opt = bench->add_option("--manifest", bench_args.manifest, "Bench manifest (JSON)")
                           ->check(CLI::ExistingFile);
  auto* dataset_opt =
      bench->add_option("--dataset", bench_args.dataset, "Stored dataset id or dataset directory");
  bench->add_option("--format", bench_args.format, "Layout of a dataset directory")
      ->check(CLI::IsMember({"folder_labels", "coco_json", "mask_pngs"}));
  auto* model_opt = bench->add_option("--model", bench_args.model, "Model id");
  auto* method_opt = bench->add_option("--method", bench_args.method, "Saliency method id");
  bench->add_option("--lvm", bench_args.lvm, "LVM provider");
  bench->add_option("--out", bench_args.out, "Also write the report here");
  manifest_opt->excludes(dataset_opt);
  dataset_opt->needs(model_opt)->needs(method_opt);
  model_opt->needs(dataset_opt);
  method_opt->needs(dataset_opt);

  std::string grid, size = "224x224", masks_out;
  std::size_t n = 0;
  std::uint64_t seed = 0;
  double keep_prob = 0.5;
  auto* masks = app.add_subcommand("masks", "Precompute a random mask set");
  masks->add_option("--grid", grid, "Coarse grid ROWSxCOLS")->required();
  masks->add_option("--n", n, "Number of masks")->required()->check(CLI::PositiveNumber);
  masks->add_option("--seed", seed, "RNG seed")->required();
  masks->add_option("--keep-prob", keep_prob, "Cell keep probability")->check(CLI::Range(0.0, 1.0));
  masks->add_option("--size", size, "Image size ROWSxCOLS");
  masks->add_option("--out", masks_out, "Output file")->required();

  std::string ingest_root, ingest_format, ingest_id;
  auto* ingest = app.add_subcommand("ingest", "Read a dataset directory into the store");
  ingest->add_option("--root", ingest_root, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  ingest->add_option("--format", ingest_format, "folder_labels|coco_json|mask_pngs")
      ->required()
      ->check(CLI::IsMember({"folder_labels", "coco_json", "mask_pngs"}));
  ingest->add_option("--id", ingest_id, "Dataset id (default: directory name)");

  try {
    app.parse(argc, argv);
    if (*bench && bench_args.manifest.empty() && bench_args.dataset.empty()) {
      throw CLI::RequiredError("--manifest or --dataset");
    }
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsageError;
  }

  spdlog::set_level(spdlog::level::from_str(common.log_level));
  try {
    if (*serve) return cmd_serve(common, host, port);
    if (*explain) return cmd_explain(common, ex);
    if (*eval) return cmd_eval(pairs, eval_task);
    if (*bench) return cmd_bench(common, bench_args);
    if (*masks) return cmd_masks(grid, n, seed, keep_prob, size, masks_out);
    if (*ingest) return cmd_ingest(common, ingest_root, ingest_format, ingest_id);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n";
    return kUsageError;
  } catch (const Error& e) {
    std::cerr << "error: " << e.code_name() << (e.stage().empty() ? "" : " [" + e.stage() + "]")
              << ": " << e.what() << "\n";
    return kDomainError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kDomainError;
  }
  return kUsageError;
}
