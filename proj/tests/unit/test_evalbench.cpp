#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "siamfc/error.hpp"
#include "siamfc/evalbench.hpp"
#include "siamfc/parallel.hpp"
#include "siamfc/synthdata.hpp"
#include "test_util.hpp"

using namespace siamfc;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Frames carry their index in the image width.
Image indexed_frame(int i) { return Image(i + 1, 1); }

// Replays, for each frame, either the ground truth (hit) or a far-away box.
class ScriptedTracker : public SequenceTracker {
 public:
  ScriptedTracker(std::vector<bool> hits, std::vector<BoundingBox> gt)
      : hits_(std::move(hits)), gt_(std::move(gt)) {}
  void initialize(const Image& frame, const BoundingBox&) override { inits.push_back(frame.width - 1); }
  BoundingBox update(const Image& frame) override {
    const int f = frame.width - 1;
    if (hits_[f]) return {gt_[f].cx + 1, gt_[f].cy, gt_[f].w, gt_[f].h};
    return {gt_[f].cx + 1000, gt_[f].cy, gt_[f].w, gt_[f].h};
  }
  std::vector<int> inits;

 private:
  std::vector<bool> hits_;
  std::vector<BoundingBox> gt_;
};

std::vector<BoundingBox> still_boxes(int n) { return std::vector<BoundingBox>(n, BoundingBox{50, 50, 10, 10}); }

struct VotOracle {
  int failures = 0;
  int counted = 0;
  std::vector<int> inits;
};

// Walks the protocol segment by segment: initialize, track until the first
// miss, resume `delay` frames after it.
VotOracle vot_oracle(const std::vector<bool>& hits, int delay) {
  VotOracle o;
  const int n = static_cast<int>(hits.size());
  int start = 0;
  while (start < n) {
    o.inits.push_back(start);
    int f = start + 1;
    while (f < n && hits[f]) {
      ++o.counted;
      ++f;
    }
    if (f >= n) break;
    ++o.counted;
    ++o.failures;
    start = f + delay;
  }
  return o;
}

}  // namespace

TEST_CASE("IoU") {
  CHECK(iou(BoundingBox::from_corner(0, 0, 2, 2), BoundingBox::from_corner(1, 1, 2, 2)) == doctest::Approx(1.0 / 7));
  CHECK(iou({5, 5, 4, 4}, {5, 5, 4, 4}) == doctest::Approx(1.0));
  CHECK(iou({5, 5, 4, 4}, {50, 5, 4, 4}) == 0.0);
  CHECK(iou({5, 5, 0, 4}, {5, 5, 4, 4}) == 0.0);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0, 50), s(1, 30);
  for (int i = 0; i < 500; ++i) {
    const BoundingBox a{u(rng), u(rng), s(rng), s(rng)}, b{u(rng), u(rng), s(rng), s(rng)};
    const double v = iou(a, b);
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
    CHECK(v == doctest::Approx(iou(b, a)));
    // Scaling both boxes about the origin leaves IoU unchanged.
    CHECK(v == doctest::Approx(iou({2 * a.cx, 2 * a.cy, 2 * a.w, 2 * a.h}, {2 * b.cx, 2 * b.cy, 2 * b.w, 2 * b.h})));
  }
}

TEST_CASE("success curve and AUC") {
  const auto t = default_thresholds();
  REQUIRE(t.size() == 21);
  CHECK(t.front() == 0.0);
  CHECK(t.back() == doctest::Approx(1.0));
  const std::vector<double> ious = {2.0 / 3, 1.0 / 3};
  const SuccessCurve c = success_curve(ious, t);
  CHECK(c.success_rates[0] == 1.0);
  CHECK(c.success_rates[10] == 0.5);
  CHECK(c.success_rates[20] == 0.0);
  CHECK(c.auc == doctest::Approx(0.5));

  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> v(testutil::rand_int(rng, 1, 200));
    double mean = 0.0;
    for (double& x : v) mean += (x = std::uniform_real_distribution<double>(0, 1)(rng));
    mean /= v.size();
    const SuccessCurve r = success_curve(v, t);
    for (std::size_t i = 1; i < r.success_rates.size(); ++i) CHECK(r.success_rates[i] <= r.success_rates[i - 1]);
    CHECK(std::abs(r.auc - mean) <= 0.05 + 1e-12);
  }
}

TEST_CASE("OPE over boxes") {
  const std::vector<BoundingBox> gt = {{10, 10, 4, 4}, {10, 10, 4, 4}};
  const std::vector<BoundingBox> perfect = gt;
  CHECK(ope(perfect, gt).auc == doctest::Approx(20.0 / 21));
  const std::vector<BoundingBox> lost = {{100, 10, 4, 4}, {100, 10, 4, 4}};
  CHECK(ope(lost, gt).auc == 0.0);
  CHECK_THROWS_AS(ope(std::vector<BoundingBox>(1), gt), ShapeError);
}

TEST_CASE("VOT with an always-failing tracker") {
  for (int n : {1, 2, 6, 7, 8, 13, 30, 31}) {
    ScriptedTracker tr(std::vector<bool>(n, false), still_boxes(n));
    const VotResult r = vot_run(tr, n, indexed_frame, still_boxes(n));
    CAPTURE(n);
    CHECK(r.failures == (n - 1 + 5) / 6);
    CHECK(r.accuracy == 0.0);
  }
}

TEST_CASE("VOT re-initializes five frames after a failure") {
  const int n = 20;
  std::vector<bool> hits(n, true);
  hits[4] = false;
  ScriptedTracker tr(hits, still_boxes(n));
  const VotResult r = vot_run(tr, n, indexed_frame, still_boxes(n));
  CHECK(r.failures == 1);
  CHECK(tr.inits == std::vector<int>{0, 9});
  CHECK(r.status[0] == FrameStatus::Init);
  CHECK(r.status[3] == FrameStatus::Tracked);
  CHECK(r.status[4] == FrameStatus::Failure);
  for (int f = 5; f < 9; ++f) CHECK(r.status[f] == FrameStatus::Skipped);
  CHECK(r.status[9] == FrameStatus::Init);
  CHECK(r.status[10] == FrameStatus::Tracked);
  // Frames 1-3, the failure and 10-19 are counted.
  CHECK(r.counted_frames == 3 + 1 + 10);
  const double hit_iou = iou({51, 50, 10, 10}, {50, 50, 10, 10});
  CHECK(r.accuracy == doctest::Approx(13 * hit_iou / 14));
}

TEST_CASE("VOT matches a segment-walking oracle on random scripts") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = testutil::rand_int(rng, 1, 60);
    const double p = std::uniform_real_distribution<double>(0, 1)(rng);
    std::vector<bool> hits(n);
    for (int i = 0; i < n; ++i) hits[i] = std::uniform_real_distribution<double>(0, 1)(rng) < p;
    const int delay = testutil::rand_int(rng, 1, 7);
    ScriptedTracker tr(hits, still_boxes(n));
    const VotResult r = vot_run(tr, n, indexed_frame, still_boxes(n), VotConfig{delay});
    const VotOracle o = vot_oracle(hits, delay);
    CAPTURE(trial);
    CHECK(r.failures == o.failures);
    CHECK(r.counted_frames == o.counted);
    CHECK(tr.inits == o.inits);
    int counted = 0;
    for (auto s : r.status) counted += s == FrameStatus::Tracked || s == FrameStatus::Failure;
    CHECK(counted == r.counted_frames);
  }
}

TEST_CASE("predictions JSONL round trip") {
  const auto dir = testutil::temp_dir("predictions");
  const std::vector<BoundingBox> boxes = {{10.5, 20.25, 4, 6}, {11.125, 19.0, 4.5, 6.75}};
  write_predictions(boxes, dir / "p.jsonl");
  const auto back = read_predictions(dir / "p.jsonl");
  REQUIRE(back.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(back[i].cx == doctest::Approx(boxes[i].cx));
    CHECK(back[i].cy == doctest::Approx(boxes[i].cy));
    CHECK(back[i].w == doctest::Approx(boxes[i].w));
    CHECK(back[i].h == doctest::Approx(boxes[i].h));
  }
  const std::string text = slurp(dir / "p.jsonl");
  CHECK(text.find("\"frame_index\":1") != std::string::npos);
  CHECK(text.find("\"x\":8.5") != std::string::npos);
  CHECK_THROWS_AS(read_predictions(dir / "none.jsonl"), IoError);
}

TEST_CASE("live evaluation is independent of the thread count") {
  const auto dir = testutil::temp_dir("eval_live");
  SynthConfig c;
  c.canvas = 128;
  c.frames = 8;
  c.min_size = 24;
  c.max_size = 32;
  std::vector<EvalSequence> seqs;
  for (const auto& a : gen_dataset(3, c, 9, Split::Test, dir / "data")) seqs.push_back(EvalSequence::from_annotation(a));
  const SiameseModel model{init_params(build_net("tiny"), 1), {}};

  set_num_threads(1);
  const EvalReport one = evaluate(model, seqs);
  set_num_threads(3);
  const EvalReport three = evaluate(model, seqs);
  set_num_threads(1);
  write_metrics_json(one, dir / "a.json");
  write_metrics_json(three, dir / "b.json");
  CHECK(slurp(dir / "a.json") == slurp(dir / "b.json"));
  REQUIRE(one.sequences.size() == 3);
  CHECK(one.sequences[0].video_id < one.sequences[1].video_id);
  CHECK(one.sequences[0].predictions.size() == 8);
  CHECK(one.sequences[0].has_vot);
  double auc = 0.0;
  for (const auto& s : one.sequences) auc += s.curve.auc;
  CHECK(one.auc == doctest::Approx(auc / 3));

  // Scoring the stored predictions reproduces the OPE numbers.
  std::vector<std::vector<BoundingBox>> preds;
  for (const auto& s : one.sequences) preds.push_back(s.predictions);
  const EvalReport stored = evaluate_predictions(seqs, preds);
  CHECK(stored.auc == doctest::Approx(one.auc));
  CHECK(stored.mean_iou == doctest::Approx(one.mean_iou));
  write_success_csv(one, dir / "s.csv");
  CHECK(slurp(dir / "s.csv").find("threshold") != std::string::npos);
}
