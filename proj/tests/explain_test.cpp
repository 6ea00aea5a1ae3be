#include <gtest/gtest.h>

#include <thread>

#include <unistd.h>

#include "fixtures.hpp"
#include "langxai/explain.hpp"
#include "langxai/toy_models.hpp"

using namespace langxai;
using fixture::code_of;

namespace {

const fs::path kFixtures = fs::path(LANGXAI_DATA_DIR) / "fixtures";

struct Bench {
  fs::path dir;
  ModelRegistry models;
  MethodRegistry methods;
  LvmGateway gateway{[](const std::string&) { return std::optional<std::string>{}; },
                     [](double) {}};
  std::unique_ptr<RunStore> store;
  std::unique_ptr<Workbench> wb;

  Bench() {
    static std::atomic<int> n{0};
    dir = fs::temp_directory_path() /
          ("langxai-explain-" + std::to_string(::getpid()) + "-" + std::to_string(n++));
    fs::remove_all(dir);
    toy::register_toy_models(models);
    register_default_methods(methods);
    register_default_providers(gateway);
    store = std::make_unique<RunStore>(dir, [] { return std::string("2026-01-01T00:00:00Z"); });
    wb = std::make_unique<Workbench>(Workbench{models, methods, gateway, *store});
  }
  ~Bench() { fs::remove_all(dir); }

  std::string upload(const fs::path& png) { return store->put(encode_png(load_png(png))); }
};

ExplanationRequest classification_request(Bench& b, int truth) {
  ExplanationRequest req;
  req.image_ref = b.upload(kFixtures / "classification" / "left" / "cls-1.png");
  req.task = TaskKind::Classification;
  req.model_id = "toy_region_scorer";
  req.method_id = "gradcam";
  req.ground_truth = GroundTruth{TaskKind::Classification, ClassLabel{truth, ""}};
  return req;
}

}  // namespace

TEST(RunExplanation, MockRunOnFixture) {
  Bench b;
  const ExplanationRecord r = run_explanation(classification_request(b, 0), *b.wb);
  EXPECT_EQ(r.record_id, 1);
  EXPECT_EQ(r.verdict, Verdict::Match);
  EXPECT_EQ(r.explanation_text, "Model predicted left; salient region described; verdict match");
  EXPECT_EQ(r.lvm_provider, "mock");
  EXPECT_EQ(r.template_id, "default-v1");
  EXPECT_EQ(r.created_at, "2026-01-01T00:00:00Z");
  EXPECT_EQ(std::get<ClassTarget>(r.target).class_id, 0);

  // every blob reference in the record resolves
  for (const auto* ref : {&r.image_ref, &r.saliency_ref, &r.overlay_ref}) {
    EXPECT_TRUE(b.store->contains(*ref));
  }
  const Bytes sal = b.store->get(r.saliency_ref);
  const auto map = json::parse(sal.begin(), sal.end()).get<SaliencyMap>();
  EXPECT_EQ(map.height, 16u);
  EXPECT_EQ(map.method_id, "gradcam");
  const ImageTensor overlay = decode_png(b.store->get(r.overlay_ref));
  EXPECT_EQ(overlay.channels(), 3u);

  const json stored = b.store->record(1);
  EXPECT_EQ(stored["kind"], "explanation");
  EXPECT_EQ(stored["verdict"], "match");
  EXPECT_EQ(stored["explanation_text"], r.explanation_text);
  EXPECT_EQ(stored["request"]["model_id"], "toy_region_scorer");
  EXPECT_EQ(stored["template_id"], "default-v1");
}

TEST(RunExplanation, WrongGroundTruthIsAMismatch) {
  Bench b;
  const ExplanationRecord r = run_explanation(classification_request(b, 1), *b.wb);
  EXPECT_EQ(r.verdict, Verdict::Mismatch);
  EXPECT_EQ(r.explanation_text, "Model predicted left; salient region described; verdict mismatch");
  bool stated = false;
  for (std::size_t i = 0; i < r.prompt.parts.size(); ++i) {
    if (r.prompt.stage_tags[i] == PromptStage::ReliabilityCheck &&
        r.prompt.parts[i].value.find("does not match the ground truth") != std::string::npos) {
      stated = true;
    }
  }
  EXPECT_TRUE(stated);
}

TEST(RunExplanation, GroundTruthIsOptional) {
  Bench b;
  auto req = classification_request(b, 0);
  req.ground_truth.reset();
  const ExplanationRecord r = run_explanation(req, *b.wb);
  EXPECT_EQ(r.verdict, Verdict::Unverified);
  EXPECT_EQ(r.explanation_text, "Model predicted left; salient region described; verdict unverified");
  EXPECT_TRUE(b.store->record(r.record_id)["request"]["ground_truth"].is_null());
}

TEST(RunExplanation, LvmFailureIsTaggedAndLeavesNoRecord) {
  Bench b;
  run_explanation(classification_request(b, 0), *b.wb);
  ASSERT_EQ(b.store->record_count(), 1u);
  auto req = classification_request(b, 0);
  req.lvm.provider = "openai";
  req.lvm.credential_ref = "LANGXAI_TEST_NO_SUCH_VARIABLE";
  try {
    run_explanation(req, *b.wb);
    FAIL() << "expected an LVM failure";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::AuthError);
    EXPECT_EQ(e.stage(), "lvm");
  }
  EXPECT_EQ(b.store->record_count(), 1u);
}

TEST(RunExplanation, StageTagsOnEarlierFailures) {
  Bench b;
  const auto stage_and_code = [&](ExplanationRequest req) {
    try {
      run_explanation(req, *b.wb);
    } catch (const Error& e) {
      return std::make_pair(e.stage(), e.code());
    }
    return std::make_pair(std::string("none"), ErrorCode::InvalidValue);
  };
  auto req = classification_request(b, 0);
  req.method_id = "nope";
  EXPECT_EQ(stage_and_code(req), std::make_pair(std::string("input"), ErrorCode::UnknownMethod));
  req = classification_request(b, 0);
  req.image_ref = std::string(64, 'f');
  EXPECT_EQ(stage_and_code(req), std::make_pair(std::string("input"), ErrorCode::UnresolvableRef));
  req = classification_request(b, 0);
  req.target = ClassTarget{9};
  EXPECT_EQ(stage_and_code(req), std::make_pair(std::string("saliency"), ErrorCode::TargetInvalid));
  req = classification_request(b, 0);
  req.method_id = "drise";
  EXPECT_EQ(stage_and_code(req),
            std::make_pair(std::string("saliency"), ErrorCode::MethodNotApplicable));
  req = classification_request(b, 0);
  req.ground_truth = GroundTruth{TaskKind::Detection, Detections{}};
  EXPECT_EQ(stage_and_code(req), std::make_pair(std::string("input"), ErrorCode::TaskMismatch));
  EXPECT_EQ(b.store->record_count(), 0u);
}

TEST(RunExplanation, DetectionWithDrise) {
  Bench b;
  const DatasetManifest m = ingest_dataset(kFixtures / "detection", DatasetFormat::CocoJson);
  ExplanationRequest req;
  req.image_ref = b.upload(m.image_file(m.items[0]));
  req.task = TaskKind::Detection;
  req.model_id = "toy_box_detector";
  req.method_id = "drise";
  req.ground_truth = m.items[0].ground_truth;
  req.saliency.masks = {200, {4, 4}, 0.5, 3};
  const ExplanationRecord r = run_explanation(req, *b.wb);
  EXPECT_EQ(r.verdict, Verdict::Match);
  EXPECT_EQ(std::get<DetectionTarget>(r.target).detection_index, 0u);
  EXPECT_EQ(r.explanation_text, "Model predicted left; salient region described; verdict match");

  // an explicit index takes the detection from the prediction
  req.target = DetectionTarget{0, {}};
  EXPECT_EQ(run_explanation(req, *b.wb).verdict, Verdict::Match);
  req.target = DetectionTarget{3, {}};
  EXPECT_EQ(code_of([&] { run_explanation(req, *b.wb); }), ErrorCode::TargetInvalid);
}

TEST(RunExplanation, ConcurrentRunsGetDistinctRecords) {
  Bench b;
  const auto req = classification_request(b, 0);
  std::vector<std::int64_t> ids(8);
  {
    std::vector<std::jthread> threads;
    for (std::size_t t = 0; t < ids.size(); ++t) {
      threads.emplace_back([&, t] { ids[t] = run_explanation(req, *b.wb).record_id; });
    }
  }
  std::sort(ids.begin(), ids.end());
  for (std::size_t i = 0; i < ids.size(); ++i) EXPECT_EQ(ids[i], static_cast<std::int64_t>(i + 1));
}

TEST(BenchDataset, DeterministicAcrossStores) {
  const HashingEmbedder embedder;
  std::string first;
  for (int round = 0; round < 2; ++round) {
    Bench b;
    BenchRun run{ingest_dataset(kFixtures / "segmentation", DatasetFormat::MaskPngs),
                 "toy_threshold_segmenter", "hirescam", std::nullopt};
    const MetricReport rep = bench_dataset(run, LvmConfig{}, *b.wb, embedder);
    EXPECT_EQ(rep.per_sample.size(), 5u);
    EXPECT_EQ(b.store->record_count(), 5u);
    const std::string text = json(rep).dump();
    if (round == 0) first = text;
    else EXPECT_EQ(text, first);
  }
}
