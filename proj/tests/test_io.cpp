#include <sstream>

#include <gtest/gtest.h>
#include <zlib.h>

#include "support.hpp"

using namespace m2ru;
using m2ru::testing::slurp;
using m2ru::testing::TempDir;

namespace {

std::vector<std::uint8_t> image_fixture(std::size_t n, std::uint32_t rows, std::uint32_t cols) {
  std::vector<std::vector<std::uint8_t>> imgs;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::uint8_t> img(rows * cols);
    for (std::size_t p = 0; p < img.size(); ++p) img[p] = static_cast<std::uint8_t>((i * 31 + p * 7) % 256);
    imgs.push_back(img);
  }
  return encode_idx_images(imgs, rows, cols);
}

void write_gz(const std::filesystem::path& path, const std::vector<std::uint8_t>& b) {
  gzFile f = gzopen(path.string().c_str(), "wb");
  ASSERT_NE(f, nullptr);
  ASSERT_EQ(gzwrite(f, b.data(), static_cast<unsigned>(b.size())), static_cast<int>(b.size()));
  gzclose(f);
}

template <class F>
std::string error_of(F&& f) {
  try {
    f();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

RunConfig small_run_config(const std::filesystem::path& dir) {
  // 2 permuted tasks over a synthetic 6x6 image set written as IDX.
  const LabeledSet imgs = m2ru::testing::striped_images(60, 6, 6, 6, 3);
  std::vector<std::vector<std::uint8_t>> raw;
  std::vector<std::uint8_t> labels;
  for (std::size_t i = 0; i < imgs.size(); ++i) {
    std::vector<std::uint8_t> img;
    for (double v : imgs.samples.row(i)) img.push_back(static_cast<std::uint8_t>(std::lround(v * 255)));
    raw.push_back(img);
    labels.push_back(static_cast<std::uint8_t>(imgs.labels[i]));
  }
  write_bytes(dir / "img.idx", encode_idx_images(raw, 6, 6));
  write_bytes(dir / "lab.idx", encode_idx_labels(labels));
  nlohmann::json j = {
      {"seed", 4},
      {"network", {{"hidden", 10}}},
      {"replay", {{"capacity_per_task", 6}}},
      {"dataset",
       {{"kind", "permuted_mnist"}, {"images", "img.idx"}, {"labels", "lab.idx"},
        {"train_count", 40}, {"test_count", 20}, {"tasks", 2}}}};
  return parse_run_config(j, dir);
}

}  // namespace

TEST(Idx, ParsesImagesAndScales) {
  std::vector<std::vector<std::uint8_t>> imgs{{0, 255, 128, 1}, {255, 255, 0, 0}};
  const LabeledSet s = parse_idx_images(encode_idx_images(imgs, 2, 2));
  EXPECT_EQ(s.size(), 2u);
  EXPECT_EQ(s.image_rows, 2u);
  EXPECT_EQ(s.image_cols, 2u);
  EXPECT_EQ(s.samples(0, 1), 1.0);
  EXPECT_EQ(s.samples(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(s.samples(0, 2), 128.0 / 255.0);
  EXPECT_EQ(parse_idx_labels(encode_idx_labels({3, 9})), (std::vector<int>{3, 9}));
}

TEST(Idx, ZeroItems) {
  const LabeledSet s = parse_idx_images(encode_idx_images({}, 28, 28));
  EXPECT_EQ(s.size(), 0u);
  EXPECT_TRUE(parse_idx_labels(encode_idx_labels({})).empty());
}

TEST(Idx, TruncatedBadMagicAndTrailing) {
  auto b = image_fixture(3, 4, 4);
  auto cut = b;
  cut.resize(cut.size() - 5);
  const std::string trunc = error_of([&] { parse_idx_images(cut); });
  EXPECT_NE(trunc.find("truncated payload"), std::string::npos) << trunc;
  EXPECT_NE(trunc.find(std::to_string(cut.size())), std::string::npos) << trunc;

  auto bad = b;
  bad[3] = 0x01;
  EXPECT_NE(error_of([&] { parse_idx_images(bad); }).find("bad magic 0x00000801"), std::string::npos);

  auto extra = b;
  extra.push_back(0);
  EXPECT_NE(error_of([&] { parse_idx_images(extra); }).find("1 trailing bytes"), std::string::npos);

  EXPECT_THROW(parse_idx_images(std::vector<std::uint8_t>{0, 0, 8}), ParseError);
  EXPECT_THROW(parse_idx_labels(b), ParseError);
}

TEST(Idx, GzipAndPlainLoadIdentically) {
  TempDir dir("idx");
  const auto img = image_fixture(5, 3, 3);
  const auto lab = encode_idx_labels({0, 1, 2, 3, 4});
  write_bytes(dir.path() / "i", img);
  write_bytes(dir.path() / "l", lab);
  write_gz(dir.path() / "i.gz", img);
  write_gz(dir.path() / "l.gz", lab);
  const LabeledSet a = load_idx(dir.path() / "i", dir.path() / "l");
  const LabeledSet b = load_idx(dir.path() / "i.gz", dir.path() / "l.gz");
  EXPECT_TRUE(a == b);
  EXPECT_EQ(a.labels, (std::vector<int>{0, 1, 2, 3, 4}));
  EXPECT_THROW(load_idx(dir.path() / "i", dir.path() / "missing"), ConfigError);
  write_bytes(dir.path() / "l3", encode_idx_labels({0, 1, 2}));
  EXPECT_THROW(load_idx(dir.path() / "i", dir.path() / "l3"), ParseError);
}

TEST(Features, ParsesExample) {
  std::istringstream in("0.1,0.2,3\n");
  const LabeledSet s = parse_features(in);
  ASSERT_EQ(s.size(), 1u);
  EXPECT_EQ(s.samples(0, 0), 0.1);
  EXPECT_EQ(s.samples(0, 1), 0.2);
  EXPECT_EQ(s.labels[0], 3);
}

TEST(Features, ErrorsNameTheLine) {
  std::istringstream ragged("1,2,0\n3,4,1\n5,1\n");
  const std::string e1 = error_of([&] { parse_features(ragged, "f.csv"); });
  EXPECT_NE(e1.find("f.csv:3"), std::string::npos) << e1;
  EXPECT_NE(e1.find("ragged"), std::string::npos) << e1;
  std::istringstream word("1,2,0\n1,x,0\n");
  const std::string e2 = error_of([&] { parse_features(word, "f.csv"); });
  EXPECT_NE(e2.find("f.csv:2"), std::string::npos) << e2;
  EXPECT_NE(e2.find("non-numeric"), std::string::npos) << e2;
  std::istringstream frac("1,2,0.5\n");
  EXPECT_THROW(parse_features(frac), ParseError);
  std::istringstream empty_field("1,,0\n");
  EXPECT_THROW(parse_features(empty_field), ParseError);
}

TEST(Features, RoundTripIsExact) {
  TempDir dir("feat");
  XorShift32 rng(2);
  LabeledSet s{m2ru::testing::random_matrix(100, 7, -50, 50, rng), {}, 0, 0};
  for (int i = 0; i < 100; ++i) s.labels.push_back(i % 9);
  save_features(dir.path() / "f.csv", s);
  const LabeledSet back = load_features(dir.path() / "f.csv");
  EXPECT_TRUE(back.samples == s.samples);
  EXPECT_EQ(back.labels, s.labels);
}

TEST(Config, RejectsUnknownKeysAndBadTypes) {
  const std::string e = error_of([] { parse_run_config(nlohmann::json{{"network", {{"hiden", 5}}}}); });
  EXPECT_NE(e.find("network.hiden"), std::string::npos) << e;
  EXPECT_THROW(parse_run_config(nlohmann::json{{"bogus", 1}}), ConfigError);
  EXPECT_THROW(parse_run_config(nlohmann::json{{"network", {{"hidden", "ten"}}}}), ConfigError);
  EXPECT_THROW(parse_run_config(nlohmann::json{{"network", {{"hidden", -3}}}}), ConfigError);
  EXPECT_THROW(parse_run_config(nlohmann::json{{"backend", "gpu"}}), ConfigError);
  EXPECT_THROW(parse_run_config(nlohmann::json{{"seeds", {{"weights", 0}}}}), SeedError);
  EXPECT_THROW(parse_run_config(nlohmann::json{{"seeds", {{"weights", -1}}}}), ConfigError);
}

TEST(Config, JsonRoundTrip) {
  RunConfig c = parse_run_config(nlohmann::json{{"seed", 9},
                                                {"backend", "crossbar"},
                                                {"seeds", {{"feedback", 17}}},
                                                {"network", {{"hidden", 33}, {"update", 0.7}}},
                                                {"replay", {{"bits", 8}}}});
  EXPECT_EQ(c.continual.seed, 9u);
  EXPECT_EQ(c.continual.backend, BackendKind::crossbar);
  EXPECT_EQ(c.continual.named_seed("feedback"), 17u);
  EXPECT_EQ(c.continual.hidden, 33u);
  EXPECT_EQ(c.continual.replay.bits, 8u);
  const nlohmann::json j = to_json(c);
  EXPECT_EQ(to_json(parse_run_config(j)), j);
}

TEST(Config, ShippedConfigLoads) {
  const RunConfig c = load_run_config(std::filesystem::path(M2RU_DATA_DIR) / "../../configs/permuted_mnist.json");
  EXPECT_EQ(c.dataset.tasks, 3u);
  EXPECT_EQ(c.continual.train.keep_ratio, 0.43);
  EXPECT_NO_THROW(c.check_paths());
}

TEST(Config, MissingDatasetFileReportedBeforeCompute) {
  TempDir dir("cfg");
  RunConfig c = parse_run_config(
      nlohmann::json{{"dataset", {{"images", "nope.idx"}, {"labels", "nope2.idx"}}}}, dir.path());
  const std::string e = error_of([&] { c.check_paths(); });
  EXPECT_NE(e.find("nope.idx"), std::string::npos) << e;
}

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
  for (BackendKind kind : {BackendKind::reference, BackendKind::crossbar}) {
    TempDir dir("ckpt");
    RunConfig cfg = small_run_config(dir.path());
    cfg.continual.backend = kind;
    const TaskStream s = load_task_stream(cfg);
    ContinualRun run(s, cfg.continual);
    run.run(55);
    save_checkpoint(dir.path() / "a.ckpt", cfg, run.state());
    const Checkpoint ck = load_checkpoint(dir.path() / "a.ckpt");
    EXPECT_EQ(ck.config, to_json(cfg));
    write_bytes(dir.path() / "b.ckpt", encode_checkpoint(ck.config, ck.state));
    EXPECT_EQ(slurp(dir.path() / "a.ckpt"), slurp(dir.path() / "b.ckpt"));
  }
}

TEST(Checkpoint, CorruptionAndVersionDetected) {
  TempDir dir("ckpt");
  const RunConfig cfg = small_run_config(dir.path());
  const TaskStream s = load_task_stream(cfg);
  ContinualRun run(s, cfg.continual);
  run.run(10);
  auto bytes = encode_checkpoint(to_json(cfg), run.state());

  auto flipped = bytes;
  flipped[flipped.size() / 2] ^= 0x40;
  const std::string e1 = error_of([&] { decode_checkpoint(flipped); });
  EXPECT_NE(e1.find("checksum mismatch"), std::string::npos) << e1;

  auto versioned = bytes;
  versioned[8] = 2;
  const std::uint32_t crc = detail::crc32_of(versioned.data(), versioned.size() - 4);
  for (int k = 0; k < 4; ++k) versioned[versioned.size() - 4 + k] = static_cast<std::uint8_t>(crc >> (8 * k));
  const std::string e2 = error_of([&] { decode_checkpoint(versioned); });
  EXPECT_NE(e2.find("version 2"), std::string::npos) << e2;

  auto short_file = bytes;
  short_file.resize(10);
  EXPECT_THROW(decode_checkpoint(short_file), CheckpointError);
  EXPECT_THROW(load_checkpoint(dir.path() / "absent.ckpt"), CheckpointError);
}

TEST(Checkpoint, ResumeMatchesUninterruptedRun) {
  for (BackendKind kind : {BackendKind::reference, BackendKind::crossbar}) {
    TempDir dir("resume");
    RunConfig cfg = small_run_config(dir.path());
    cfg.continual.backend = kind;
    const TaskStream s = load_task_stream(cfg);
    ContinualRun full(s, cfg.continual);
    full.run();
    write_run_outputs(dir.path() / "full", cfg, full);

    // Interrupt mid-way through the second task.
    ContinualRun part(s, cfg.continual);
    part.run(57);
    save_checkpoint(dir.path() / "mid.ckpt", cfg, part.state());
    Checkpoint ck = load_checkpoint(dir.path() / "mid.ckpt");
    const RunConfig restored = parse_run_config(ck.config, dir.path());
    ContinualRun resumed(s, restored.continual, std::move(ck.state));
    resumed.run();
    write_run_outputs(dir.path() / "resumed", restored, resumed);

    for (const char* f : {"steps.csv", "accuracy_matrix.csv", "write_cdf.csv", "summary.json", "config.json"}) {
      EXPECT_EQ(slurp(dir.path() / "full" / f), slurp(dir.path() / "resumed" / f)) << f;
    }
    EXPECT_EQ(encode_checkpoint(ck.config, full.state()), encode_checkpoint(ck.config, resumed.state()));
  }
}

TEST(Metrics, RepeatedRunsAreByteIdentical) {
  TempDir dir("metrics");
  const RunConfig cfg = small_run_config(dir.path());
  const TaskStream s = load_task_stream(cfg);
  for (const char* sub : {"a", "b"}) {
    ContinualRun run(s, cfg.continual);
    run.run();
    write_run_outputs(dir.path() / sub, cfg, run);
  }
  for (const char* f : {"steps.csv", "accuracy_matrix.csv", "write_cdf.csv", "summary.json", "config.json"}) {
    const std::string a = slurp(dir.path() / "a" / f);
    EXPECT_FALSE(a.empty()) << f;
    EXPECT_EQ(a, slurp(dir.path() / "b" / f)) << f;
  }
  EXPECT_EQ(accuracy_csv(AccuracyMatrix{2, {{0.5}}}), "after_task,task_0,task_1\n0,0.5,\n");
}
