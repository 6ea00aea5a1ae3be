#include <gtest/gtest.h>

#include <random>

#include "fixtures.hpp"
#include "langxai/image_io.hpp"
#include "langxai/prompt_pipeline.hpp"

using namespace langxai;
using fixture::code_of;

namespace {

SaliencyMap constant_map(std::size_t h, std::size_t w, double v) {
  SaliencyMap m;
  m.height = h;
  m.width = w;
  m.values.assign(h * w, v);
  return m;
}

struct Refs {
  MemoryBlobStore blobs;
  std::string image;
  std::string overlay;
  Refs() {
    image = blobs.put(encode_png(ImageTensor::filled(2, 2, 1, 0.25)));
    overlay = blobs.put(encode_png(ImageTensor::filled(2, 2, 3, 0.5)));
  }
};

PromptInputs classification_inputs(const Refs& refs, int truth) {
  const std::vector<std::string> labels{"golden retriever", "tabby cat"};
  return {TaskKind::Classification,
          refs.image,
          refs.overlay,
          Prediction{TaskKind::Classification, ClassProbs{0.9, 0.1}, "m"},
          ClassTarget{0},
          GroundTruth{TaskKind::Classification, ClassLabel{truth, ""}},
          labels};
}

const std::string& stage_text(const PromptBundle& b, PromptStage stage) {
  for (std::size_t i = 0; i < b.parts.size(); ++i) {
    if (b.stage_tags[i] == stage && b.parts[i].kind == MessagePart::Kind::Text) return b.parts[i].value;
  }
  static const std::string none;
  ADD_FAILURE() << "no text in stage " << to_string(stage);
  return none;
}

void expect_stage_structure(const PromptBundle& b) {
  ASSERT_EQ(b.parts.size(), b.stage_tags.size());
  // each stage appears as one contiguous run, in order
  std::vector<PromptStage> runs;
  for (auto t : b.stage_tags) {
    if (runs.empty() || runs.back() != t) runs.push_back(t);
  }
  EXPECT_EQ(runs, (std::vector<PromptStage>{PromptStage::FocalAreas, PromptStage::PredictionCheck,
                                            PromptStage::ReliabilityCheck}));
  std::size_t focal_images = 0;
  for (std::size_t i = 0; i < b.parts.size(); ++i) {
    if (b.stage_tags[i] == PromptStage::FocalAreas && b.parts[i].kind == MessagePart::Kind::ImageRef) {
      ++focal_images;
    }
  }
  EXPECT_GE(focal_images, 1u);
}

}  // namespace

TEST(Colormap, Anchors) {
  EXPECT_EQ(colormap(0.0), (Rgb{0, 0, 1}));
  EXPECT_EQ(colormap(1.0 / 3.0), (Rgb{0, 1, 1}));
  EXPECT_EQ(colormap(2.0 / 3.0), (Rgb{1, 1, 0}));
  EXPECT_EQ(colormap(1.0), (Rgb{1, 0, 0}));
  const Rgb sixth = colormap(1.0 / 6.0);
  EXPECT_NEAR(sixth[0], 0.0, 1e-12);
  EXPECT_NEAR(sixth[1], 0.5, 1e-12);
  EXPECT_NEAR(sixth[2], 1.0, 1e-12);
  const Rgb late = colormap(5.0 / 6.0);
  EXPECT_NEAR(late[0], 1.0, 1e-12);
  EXPECT_NEAR(late[1], 0.5, 1e-12);
  EXPECT_NEAR(late[2], 0.0, 1e-12);
}

TEST(Overlay, Examples) {
  const ImageTensor rgb(1, 2, 3, {0.1, 0.2, 0.3, 0.4, 0.5, 0.6});
  EXPECT_EQ(render_overlay(rgb, constant_map(1, 2, 0.7), 0.0), rgb);

  const ImageTensor out = render_overlay(rgb, constant_map(1, 2, 0.0), 1.0);
  for (std::size_t x = 0; x < 2; ++x) {
    EXPECT_EQ(out.at(0, x, 0), 0.0);
    EXPECT_EQ(out.at(0, x, 1), 0.0);
    EXPECT_EQ(out.at(0, x, 2), 1.0);
  }

  const ImageTensor gray = ImageTensor::filled(1, 1, 1, 0.4);
  const ImageTensor blend = render_overlay(gray, constant_map(1, 1, 1.0), 0.5);
  ASSERT_EQ(blend.channels(), 3u);
  EXPECT_NEAR(blend.at(0, 0, 0), 0.7, 1e-12);
  EXPECT_NEAR(blend.at(0, 0, 1), 0.2, 1e-12);
  EXPECT_NEAR(blend.at(0, 0, 2), 0.2, 1e-12);

  // gray at alpha 0 keeps every pixel value in every channel
  const ImageTensor same = render_overlay(gray, constant_map(1, 1, 0.3), 0.0);
  for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(same.at(0, 0, c), 0.4);
}

TEST(Overlay, Errors) {
  const ImageTensor img = ImageTensor::filled(2, 2, 1, 0.5);
  EXPECT_EQ(code_of([&] { render_overlay(img, constant_map(2, 3, 0.0), 0.5); }),
            ErrorCode::DimensionMismatch);
  EXPECT_EQ(code_of([&] { render_overlay(img, constant_map(2, 2, 0.0), 1.5); }),
            ErrorCode::ValueOutOfRange);
  EXPECT_EQ(code_of([&] { render_overlay(img, constant_map(2, 2, 0.0), -0.1); }),
            ErrorCode::ValueOutOfRange);
}

TEST(Overlay, IdentityAtZeroAndBoundedEverywhere) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> dim(1, 6);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t h = dim(rng), w = dim(rng);
    const ImageTensor img = fixture::random_image(rng, h, w, 3);
    SaliencyMap m = constant_map(h, w, 0.0);
    for (double& v : m.values) v = u(rng);
    EXPECT_EQ(render_overlay(img, m, 0.0), img);
    const double alpha = u(rng);
    const ImageTensor out = render_overlay(img, m, alpha);
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const Rgb heat = colormap(m.at(y, x));
        for (std::size_t c = 0; c < 3; ++c) {
          const double v = out.at(y, x, c);
          EXPECT_GE(v, 0.0);
          EXPECT_LE(v, 1.0);
          EXPECT_NEAR(v, (1 - alpha) * img.at(y, x, c) + alpha * heat[c], 1e-12);
        }
      }
    }
  }
}

TEST(Template, ShippedFileMatchesBuiltIn) {
  const auto file = load_template(std::string(LANGXAI_SOURCE_DIR) + "/templates/default-v1.txt");
  EXPECT_EQ(file.template_id, "default-v1");
  EXPECT_EQ(file.sections, default_template().sections);
}

TEST(Template, ParseErrors) {
  EXPECT_EQ(code_of([] { PromptTemplate::parse("[focal_areas]\nx\n"); }), ErrorCode::ParseError);
  EXPECT_EQ(code_of([] {
              PromptTemplate::parse("template_id: t\n[focal_areas]\na\n[prediction_check]\nb\n");
            }),
            ErrorCode::ParseError);
  EXPECT_EQ(code_of([] { fill_placeholders("hello {nobody}", {}); }), ErrorCode::ParseError);
  EXPECT_EQ(fill_placeholders("{a} and {b}", {{"a", "x"}, {"b", "{a}"}}), "x and {a}");
}

TEST(BuildPrompt, ClassificationMatch) {
  Refs refs;
  const PromptBundle b = build_prompt(classification_inputs(refs, 0), refs.blobs);
  expect_stage_structure(b);
  EXPECT_EQ(b.template_id, "default-v1");
  EXPECT_EQ(b.parts[0], (MessagePart{MessagePart::Kind::ImageRef, refs.image}));
  EXPECT_EQ(b.parts[1], (MessagePart{MessagePart::Kind::ImageRef, refs.overlay}));
  EXPECT_NE(stage_text(b, PromptStage::PredictionCheck).find("\"golden retriever\""),
            std::string::npos);
  const std::string& reliability = stage_text(b, PromptStage::ReliabilityCheck);
  EXPECT_NE(reliability.find("the prediction matches the ground truth"), std::string::npos);
  EXPECT_NE(reliability.find("\"golden retriever\""), std::string::npos);
  EXPECT_EQ(b.facts.at("verdict_hint"), "match");
  EXPECT_EQ(b.facts.at("prediction"), "golden retriever");
}

TEST(BuildPrompt, ClassificationMismatchStatesDisagreement) {
  Refs refs;
  const PromptBundle b = build_prompt(classification_inputs(refs, 1), refs.blobs);
  const std::string& reliability = stage_text(b, PromptStage::ReliabilityCheck);
  EXPECT_NE(reliability.find("does not match the ground truth"), std::string::npos);
  EXPECT_NE(reliability.find("\"tabby cat\""), std::string::npos);
  EXPECT_EQ(b.facts.at("verdict_hint"), "mismatch");
}

TEST(BuildPrompt, WithoutGroundTruthSkipsReliability) {
  Refs refs;
  PromptInputs in = classification_inputs(refs, 0);
  in.ground_truth.reset();
  const PromptBundle b = build_prompt(in, refs.blobs);
  ASSERT_EQ(b.parts.size(), 4u);
  for (PromptStage s : b.stage_tags) EXPECT_NE(s, PromptStage::ReliabilityCheck);
  EXPECT_EQ(b.facts.at("verdict_hint"), "unverified");
  EXPECT_EQ(b.facts.at("prediction"), "golden retriever");
  EXPECT_EQ(b.facts.at("ground_truth"), "not provided");
  EXPECT_EQ(parse_verdict("unverified"), Verdict::Unverified);
}

TEST(BuildPrompt, DetectionEmbedsTargetBoxAndClass) {
  Refs refs;
  const Detection det{{1.5, 0.5, 3.5, 2.5}, {0.0, 1.0}, 0.9};
  const Detection gt = make_gt_detection({1.5, 0.5, 3.5, 3.0}, 1, 2);
  const PromptInputs in{TaskKind::Detection,
                        refs.image,
                        refs.overlay,
                        Prediction{TaskKind::Detection, Detections{det}, "d"},
                        DetectionTarget{0, det},
                        GroundTruth{TaskKind::Detection, Detections{gt}},
                        {"left", "right"}};
  const PromptBundle b = build_prompt(in, refs.blobs);
  expect_stage_structure(b);
  const std::string& check = stage_text(b, PromptStage::PredictionCheck);
  EXPECT_NE(check.find("(1.50, 0.50, 3.50, 2.50)"), std::string::npos);
  EXPECT_NE(check.find("\"right\""), std::string::npos);
  // IoU = 4 / 5 with the same class
  EXPECT_EQ(b.facts.at("verdict_hint"), "match");

  PromptInputs wrong_class = in;
  wrong_class.ground_truth = GroundTruth{TaskKind::Detection, Detections{make_gt_detection(gt.box, 0, 2)}};
  EXPECT_EQ(build_prompt(wrong_class, refs.blobs).facts.at("verdict_hint"), "mismatch");
  PromptInputs far = in;
  far.ground_truth = GroundTruth{TaskKind::Detection, Detections{make_gt_detection({3, 3, 4, 4}, 1, 2)}};
  EXPECT_EQ(build_prompt(far, refs.blobs).facts.at("verdict_hint"), "mismatch");
}

TEST(BuildPrompt, SegmentationComparesDominantSegments) {
  Refs refs;
  const LabelMap pred{2, 2, {0, 1, 1, 1}};
  PromptInputs in{TaskKind::Segmentation,
                  refs.image,
                  refs.overlay,
                  Prediction{TaskKind::Segmentation, pred, "s"},
                  ClassTarget{1},
                  GroundTruth{TaskKind::Segmentation, LabelMap{2, 2, {1, 1, 0, 0}}},
                  {"background", "wire"}};
  const PromptBundle b = build_prompt(in, refs.blobs);
  expect_stage_structure(b);
  EXPECT_NE(stage_text(b, PromptStage::PredictionCheck).find("\"wire\""), std::string::npos);
  EXPECT_EQ(b.facts.at("verdict_hint"), "match");
  in.ground_truth = GroundTruth{TaskKind::Segmentation, LabelMap{2, 2, {0, 0, 0, 0}}};
  EXPECT_EQ(build_prompt(in, refs.blobs).facts.at("verdict_hint"), "mismatch");
}

TEST(BuildPrompt, ByteDeterministic) {
  Refs refs;
  const auto in = classification_inputs(refs, 0);
  const std::string once = json(build_prompt(in, refs.blobs)).dump();
  const std::string twice = json(build_prompt(in, refs.blobs)).dump();
  EXPECT_EQ(once, twice);
  EXPECT_EQ(json::parse(once).get<PromptBundle>(), build_prompt(in, refs.blobs));
}

TEST(BuildPrompt, Errors) {
  Refs refs;
  auto in = classification_inputs(refs, 0);
  in.overlay_ref = std::string(64, 'a');
  EXPECT_EQ(code_of([&] { build_prompt(in, refs.blobs); }), ErrorCode::UnresolvableRef);
  in.overlay_ref = "../../etc/passwd";
  EXPECT_EQ(code_of([&] { build_prompt(in, refs.blobs); }), ErrorCode::UnresolvableRef);

  auto mixed = classification_inputs(refs, 0);
  mixed.ground_truth = GroundTruth{TaskKind::Segmentation, LabelMap{1, 1, {0}}};
  EXPECT_EQ(code_of([&] { build_prompt(mixed, refs.blobs); }), ErrorCode::TaskMismatch);
  auto other = classification_inputs(refs, 0);
  other.task = TaskKind::Detection;
  EXPECT_EQ(code_of([&] { build_prompt(other, refs.blobs); }), ErrorCode::TaskMismatch);
}

TEST(BuildPrompt, EveryTaskHasAllStagesOnce) {
  Refs refs;
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.01, 1.0);
  for (int trial = 0; trial < 60; ++trial) {
    const double p = u(rng);
    PromptInputs in = classification_inputs(refs, trial % 2);
    in.prediction = Prediction{TaskKind::Classification, ClassProbs{p, 1 - p}, "m"};
    const PromptBundle b = build_prompt(in, refs.blobs);
    expect_stage_structure(b);
    const bool match = (p >= 1 - p ? 0 : 1) == trial % 2;
    EXPECT_EQ(b.facts.at("verdict_hint"), match ? "match" : "mismatch");
  }
}
