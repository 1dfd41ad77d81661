#include <gtest/gtest.h>

#include <chrono>
#include <filesystem>

#include "untangle/io.hpp"
#include "untangle/random.hpp"

using namespace untangle;

namespace {

ErrorKind kind_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorKind::InvalidInput;
}

std::string message_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.message();
  }
  return {};
}

PredictionData random_logits(Rng& rng, std::size_t n, std::size_t m, std::size_t c) {
  PredictionData d;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> v(m * c);
    for (double& x : v) x = 3.0 * rng.normal();
    d.ids.push_back(std::to_string(i));
    d.predictions.emplace_back(PredictionSet(m, c, std::move(v)));
  }
  return d;
}

PredictionData random_dirichlet(Rng& rng, std::size_t n, std::size_t c) {
  PredictionData d;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> v(c);
    for (double& x : v) x = 0.1 + 10.0 * rng.uniform();
    d.ids.push_back(std::to_string(i));
    d.predictions.emplace_back(DirichletPrediction(std::move(v)));
  }
  return d;
}

std::vector<double> values_of(const Prediction& p) {
  if (const auto* s = std::get_if<PredictionSet>(&p)) return {s->logits().begin(), s->logits().end()};
  const auto b = std::get<DirichletPrediction>(p).beta();
  return {b.begin(), b.end()};
}

void expect_float_equal(const PredictionData& a, const PredictionData& b) {
  ASSERT_EQ(a.predictions.size(), b.predictions.size());
  for (std::size_t i = 0; i < a.predictions.size(); ++i) {
    ASSERT_EQ(a.predictions[i].index(), b.predictions[i].index());
    const auto x = values_of(a.predictions[i]);
    const auto y = values_of(b.predictions[i]);
    ASSERT_EQ(x.size(), y.size());
    for (std::size_t j = 0; j < x.size(); ++j) ASSERT_EQ(static_cast<float>(x[j]), static_cast<float>(y[j]));
  }
}

class TempDir {
 public:
  TempDir() {
    Rng rng(static_cast<std::uint64_t>(std::chrono::steady_clock::now().time_since_epoch().count()), Stream::Fuzz, 0);
    path_ = std::filesystem::temp_directory_path() / ("untangle_io_" + std::to_string(rng.next()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

}  // namespace

TEST(BinaryPredictions, HeaderLayout) {
  Rng rng(61, Stream::Fuzz, 0);
  const auto bytes = encode_predictions(random_logits(rng, 3, 2, 4));
  ASSERT_EQ(bytes.size(), 24u + 3 * 2 * 4 * 4);
  EXPECT_EQ(bytes.substr(0, 4), "UQP1");
  EXPECT_EQ(detail::get_le<std::uint16_t>(bytes, 4), 1);
  EXPECT_EQ(detail::get_le<std::uint16_t>(bytes, 6), kFlagLogits);
  EXPECT_EQ(detail::get_le<std::uint64_t>(bytes, 8), 3u);
  EXPECT_EQ(detail::get_le<std::uint32_t>(bytes, 16), 2u);
  EXPECT_EQ(detail::get_le<std::uint32_t>(bytes, 20), 4u);
  const auto dir = encode_predictions(random_dirichlet(rng, 2, 3));
  EXPECT_EQ(detail::get_le<std::uint16_t>(dir, 6), kFlagDirichlet);
  EXPECT_EQ(detail::get_le<std::uint32_t>(dir, 16), 0u);
}

TEST(BinaryPredictions, RoundTripFuzz) {
  Rng rng(62, Stream::Fuzz, 0);
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 1 + rng.below(20);
    const std::size_t c = 2 + rng.below(12);
    const auto data = t % 2 ? random_logits(rng, n, 1 + rng.below(8), c) : random_dirichlet(rng, n, c);
    const auto bytes = encode_predictions(data);
    const auto back = decode_predictions(bytes);
    expect_float_equal(data, back);
    ASSERT_EQ(encode_predictions(back), bytes);
  }
}

TEST(TextPredictions, RoundTripFuzz) {
  Rng rng(63, Stream::Fuzz, 0);
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 1 + rng.below(10);
    const std::size_t c = 2 + rng.below(6);
    auto data = t % 2 ? random_logits(rng, n, 1 + rng.below(4), c) : random_dirichlet(rng, n, c);
    for (auto& id : data.ids) id = "s\"" + id;
    const auto text = format_predictions_text(data);
    const auto back = parse_predictions(text);
    ASSERT_EQ(back.ids, data.ids);
    expect_float_equal(data, back);
    ASSERT_EQ(format_predictions_text(back), text);
  }
}

TEST(BinaryPredictions, EveryHeaderByteMutationIsRejected) {
  Rng rng(64, Stream::Fuzz, 0);
  for (const auto& data : {random_logits(rng, 2, 3, 4), random_dirichlet(rng, 2, 4)}) {
    const auto bytes = encode_predictions(data);
    for (std::size_t pos = 0; pos < 8; ++pos) {
      for (int x = 1; x < 256; ++x) {
        auto mutated = bytes;
        mutated[pos] = static_cast<char>(mutated[pos] ^ x);
        const auto k = kind_of([&] { decode_predictions(mutated); });
        if (pos < 4) {
          ASSERT_EQ(k, ErrorKind::BadMagic);
        } else if (pos < 6) {
          ASSERT_EQ(k, ErrorKind::BadVersion);
        } else {
          ASSERT_TRUE(k == ErrorKind::FlagConflict || k == ErrorKind::ShapeError) << pos << ' ' << x;
        }
      }
    }
  }
}

TEST(BinaryPredictions, FlagConflicts) {
  Rng rng(65, Stream::Fuzz, 0);
  auto bytes = encode_predictions(random_logits(rng, 1, 1, 2));
  for (std::uint16_t flags : {std::uint16_t{0}, std::uint16_t{3}, std::uint16_t{4}, std::uint16_t{0x8002}}) {
    auto m = bytes;
    m[6] = static_cast<char>(flags & 0xFF);
    m[7] = static_cast<char>(flags >> 8);
    EXPECT_EQ(kind_of([&] { decode_predictions(m); }), ErrorKind::FlagConflict) << flags;
  }
}

TEST(BinaryPredictions, ShapeRules) {
  Rng rng(66, Stream::Fuzz, 0);
  const auto logits = encode_predictions(random_logits(rng, 1, 2, 3));
  auto with_u32 = [](std::string b, std::size_t off, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) b[off + i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    return b;
  };
  EXPECT_EQ(kind_of([&] { decode_predictions(with_u32(logits, 16, 0)); }), ErrorKind::ShapeError);
  EXPECT_EQ(kind_of([&] { decode_predictions(with_u32(logits, 20, 1)); }), ErrorKind::ShapeError);
  const auto dir = encode_predictions(random_dirichlet(rng, 1, 3));
  EXPECT_EQ(kind_of([&] { decode_predictions(with_u32(dir, 16, 1)); }), ErrorKind::ShapeError);
  // n so large that n * M * C * 4 overflows 64 bits
  auto huge = logits;
  for (int i = 8; i < 16; ++i) huge[i] = static_cast<char>(0xFF);
  EXPECT_EQ(kind_of([&] { decode_predictions(huge); }), ErrorKind::ShapeError);
}

TEST(BinaryPredictions, TruncationReportsOffset) {
  Rng rng(67, Stream::Fuzz, 0);
  const auto bytes = encode_predictions(random_logits(rng, 2, 2, 2));
  for (std::size_t len = 0; len < bytes.size(); ++len) {
    const auto cut = bytes.substr(0, len);
    const auto k = kind_of([&] { decode_predictions(cut); });
    ASSERT_EQ(k, ErrorKind::TruncatedPayload) << len;
    ASSERT_NE(message_of([&] { decode_predictions(cut); }).find("offset " + std::to_string(len)), std::string::npos);
  }
  const auto msg = message_of([&] { decode_predictions(bytes.substr(0, 30)); });
  EXPECT_NE(msg.find("expected " + std::to_string(bytes.size())), std::string::npos);
}

TEST(BinaryPredictions, TrailingData) {
  Rng rng(68, Stream::Fuzz, 0);
  const auto bytes = encode_predictions(random_logits(rng, 2, 2, 2));
  EXPECT_EQ(kind_of([&] { decode_predictions(bytes + "x"); }), ErrorKind::TrailingData);
  EXPECT_NE(message_of([&] { decode_predictions(bytes + "xyz"); }).find(std::to_string(bytes.size())), std::string::npos);
}

TEST(BinaryPredictions, InvalidValuesCarrySampleIndex) {
  Rng rng(69, Stream::Fuzz, 0);
  auto fixed = encode_predictions(random_dirichlet(rng, 3, 2));
  std::string negative;
  detail::put_f32(negative, -1.0);
  fixed.replace(24 + 4 * 4, 4, negative);
  EXPECT_EQ(kind_of([&] { decode_predictions(fixed); }), ErrorKind::InvalidInput);
  EXPECT_NE(message_of([&] { decode_predictions(fixed); }).find("sample 2"), std::string::npos);
}

TEST(TextPredictions, Errors) {
  EXPECT_EQ(kind_of([] { parse_predictions(""); }), ErrorKind::EmptyInput);
  EXPECT_EQ(kind_of([] { parse_predictions(" \n\n"); }), ErrorKind::EmptyInput);
  EXPECT_EQ(kind_of([] { parse_predictions("UQ"); }), ErrorKind::TruncatedPayload);
  EXPECT_EQ(kind_of([] { parse_predictions("ABCDEFGH"); }), ErrorKind::BadMagic);
  EXPECT_EQ(kind_of([] { parse_predictions("{\"id\":\"a\",\"logits\":[[1,2]],\"dirichlet\":[1,2]}"); }),
            ErrorKind::FlagConflict);
  EXPECT_EQ(kind_of([] { parse_predictions("{\"id\":\"a\",\"logits\":[[1,2]]}\n{\"id\":\"b\",\"dirichlet\":[1,2]}"); }),
            ErrorKind::FlagConflict);
  EXPECT_EQ(kind_of([] { parse_predictions("{\"id\":\"a\",\"logits\":[[1,2]]}\n{\"id\":\"a\",\"logits\":[[1,2]]}"); }),
            ErrorKind::IdMismatch);
  EXPECT_EQ(kind_of([] { parse_predictions("{\"id\":\"a\",\"logits\":[[1,2],[1]]}"); }), ErrorKind::ShapeError);
  EXPECT_EQ(kind_of([] { parse_predictions("{\"id\":\"a\",\"logits\":[[1,2]]}\n{\"id\":\"b\",\"logits\":[[1,2,3]]}"); }),
            ErrorKind::ShapeError);
  EXPECT_EQ(kind_of([] { parse_predictions("{\"id\":\"a\",\"logits\":[[1,2]]}\n{\"id\":\"b\",\"logits\":[[1,2],[3,4]]}"); }),
            ErrorKind::ShapeError);
  EXPECT_EQ(kind_of([] { parse_predictions("{\"id\":\"a\",\"dirichlet\":[1,-2]}"); }), ErrorKind::InvalidInput);
  EXPECT_EQ(kind_of([] { parse_predictions("{\"id\":\"a\"}"); }), ErrorKind::ParseError);
  EXPECT_EQ(kind_of([] { parse_predictions("{\"id\":3,\"logits\":[[1,2]]}"); }), ErrorKind::ParseError);
  EXPECT_EQ(kind_of([] { parse_predictions("{\"id\":\"a\",\"logits\":[[1,\"x\"]]}"); }), ErrorKind::ParseError);
  const auto msg = message_of([] { parse_predictions("{\"id\":\"a\",\"logits\":[[1,2]]}\n{oops"); });
  EXPECT_NE(msg.find("line 2"), std::string::npos);
}

TEST(Labels, RoundTripAndDefaults) {
  std::vector<LabelRecord> labels = {{"a", 1, std::vector<std::uint32_t>{0, 3, 1}, true, 2}, {"b", 0, std::nullopt, false, 0}};
  const auto back = parse_labels(format_labels(labels));
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].id, "a");
  EXPECT_EQ(back[0].label, 1u);
  EXPECT_EQ(*back[0].votes, (std::vector<std::uint32_t>{0, 3, 1}));
  EXPECT_TRUE(back[0].ood);
  EXPECT_EQ(back[0].severity, 2);
  EXPECT_FALSE(back[1].votes);
  const auto minimal = parse_labels("{\"id\":\"x\",\"label\":2}\r\n");
  EXPECT_FALSE(minimal[0].ood);
  EXPECT_EQ(minimal[0].severity, 0);
}

TEST(Labels, Errors) {
  EXPECT_EQ(kind_of([] { parse_labels(""); }), ErrorKind::EmptyInput);
  EXPECT_EQ(kind_of([] { parse_labels("{\"id\":\"x\"}"); }), ErrorKind::ParseError);
  EXPECT_EQ(kind_of([] { parse_labels("{\"id\":\"x\",\"label\":-1}"); }), ErrorKind::ParseError);
  EXPECT_EQ(kind_of([] { parse_labels("{\"id\":\"x\",\"label\":1,\"votes\":[1,-1]}"); }), ErrorKind::ParseError);
  EXPECT_EQ(kind_of([] { parse_labels("{\"id\":\"x\",\"label\":1,\"ood\":1}"); }), ErrorKind::ParseError);
  EXPECT_EQ(kind_of([] { parse_labels("{\"id\":\"x\",\"label\":1}\n{\"id\":\"x\",\"label\":0}"); }), ErrorKind::IdMismatch);
}

TEST(JoinLabels, PairsByIdInPredictionOrder) {
  Rng rng(70, Stream::Fuzz, 0);
  auto data = random_logits(rng, 3, 2, 3);
  const std::vector<LabelRecord> labels = {{"2", 0, std::vector<std::uint32_t>{1, 1, 0}, true, 1},
                                           {"0", 2, std::nullopt, false, 0},
                                           {"1", 1, std::nullopt, false, 0}};
  const auto joined = join_labels(data, labels);
  ASSERT_EQ(joined.size(), 3u);
  EXPECT_EQ(joined[0].label, 2u);
  EXPECT_EQ(joined[2].label, 0u);
  EXPECT_TRUE(joined[2].soft_label);
  EXPECT_EQ(joined[2].severity, 1);
}

TEST(JoinLabels, IdMismatchListsFirstTenOffenders) {
  Rng rng(71, Stream::Fuzz, 0);
  const auto data = random_logits(rng, 15, 1, 2);
  std::vector<LabelRecord> labels;
  for (int i = 100; i < 115; ++i) labels.push_back({std::to_string(i), 0, std::nullopt, false, 0});
  const auto msg = message_of([&] { join_labels(data, labels); });
  EXPECT_EQ(kind_of([&] { join_labels(data, labels); }), ErrorKind::IdMismatch);
  EXPECT_NE(msg.find("30 ids"), std::string::npos);
  for (int i = 0; i < 10; ++i) EXPECT_NE(msg.find(" " + std::to_string(i)), std::string::npos) << i;
  EXPECT_EQ(msg.find(" 10"), std::string::npos);
}

TEST(JoinLabels, ShapeAndValidationErrors) {
  Rng rng(72, Stream::Fuzz, 0);
  const auto data = random_logits(rng, 1, 1, 3);
  EXPECT_EQ(kind_of([&] { join_labels(data, {{"0", 0, std::vector<std::uint32_t>{1, 1}, false, 0}}); }),
            ErrorKind::ShapeError);
  EXPECT_EQ(kind_of([&] { join_labels(data, {{"0", 5, std::nullopt, false, 0}}); }), ErrorKind::ShapeError);
  EXPECT_EQ(kind_of([&] { join_labels(data, {{"0", 0, std::nullopt, true, 0}}); }), ErrorKind::InvalidInput);
  EXPECT_EQ(kind_of([&] { join_labels(data, {{"0", 0, std::nullopt, true, 7}}); }), ErrorKind::InvalidInput);
}

TEST(Embeddings, RoundTripAndErrors) {
  Rng rng(73, Stream::Fuzz, 0);
  std::vector<EmbeddingRecord> records(5);
  for (std::size_t i = 0; i < records.size(); ++i) {
    records[i].id = std::to_string(i);
    records[i].layers = {std::vector<double>(3), std::vector<double>(2)};
    for (auto& l : records[i].layers) {
      for (double& v : l) v = static_cast<float>(rng.normal());
    }
  }
  const auto bytes = encode_embeddings(records);
  EXPECT_EQ(bytes.size(), 20u + 2 * 4 + 5 * 5 * 4);
  auto back = decode_embeddings(bytes);
  ASSERT_EQ(back.size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(back[i].layers, records[i].layers);
  EXPECT_EQ(encode_embeddings(back), bytes);

  std::vector<LabelRecord> labels;
  for (int i = 0; i < 5; ++i) labels.push_back({std::to_string(i), static_cast<std::size_t>(i % 2), std::nullopt, i == 4, i == 4 ? 1 : 0});
  join_embedding_labels(back, labels);
  EXPECT_EQ(back[3].label, 1u);
  EXPECT_TRUE(back[4].ood);
  labels.pop_back();
  EXPECT_EQ(kind_of([&] { join_embedding_labels(back, labels); }), ErrorKind::IdMismatch);

  EXPECT_EQ(kind_of([] { decode_embeddings(""); }), ErrorKind::EmptyInput);
  EXPECT_EQ(kind_of([&] { decode_embeddings(bytes.substr(0, 10)); }), ErrorKind::TruncatedPayload);
  EXPECT_EQ(kind_of([&] { decode_embeddings(bytes.substr(0, bytes.size() - 1)); }), ErrorKind::TruncatedPayload);
  EXPECT_EQ(kind_of([&] { decode_embeddings(bytes + "z"); }), ErrorKind::TrailingData);
  auto bad = bytes;
  bad[3] = 'X';
  EXPECT_EQ(kind_of([&] { decode_embeddings(bad); }), ErrorKind::BadMagic);
  bad = bytes;
  bad[4] = 2;
  EXPECT_EQ(kind_of([&] { decode_embeddings(bad); }), ErrorKind::BadVersion);
  bad = bytes;
  bad[6] = 1;
  EXPECT_EQ(kind_of([&] { decode_embeddings(bad); }), ErrorKind::FlagConflict);
  records[1].layers.pop_back();
  EXPECT_EQ(kind_of([&] { encode_embeddings(records); }), ErrorKind::ShapeError);
}

TEST(Files, WriteReadAndMissingPaths) {
  TempDir dir;
  Rng rng(74, Stream::Fuzz, 0);
  const auto data = random_dirichlet(rng, 4, 3);
  write_predictions(dir.file("p.uqp"), data);
  expect_float_equal(data, read_predictions(dir.file("p.uqp")));
  write_predictions(dir.file("p.jsonl"), data, PredictionFormat::Text);
  expect_float_equal(data, read_predictions(dir.file("p.jsonl")));
  write_labels(dir.file("l.jsonl"), {{"0", 1, std::nullopt, false, 0}});
  EXPECT_EQ(read_labels(dir.file("l.jsonl")).size(), 1u);
  EXPECT_EQ(kind_of([&] { read_predictions(dir.file("missing")); }), ErrorKind::IoError);
  EXPECT_EQ(kind_of([&] { write_labels(dir.file("no/such/dir/l.jsonl"), {}); }), ErrorKind::IoError);
}

TEST(Report, SkeletonIsValidAndDeterministic) {
  Json config = {{"invocation", {"untangle", "eval"}}, {"seed", 7}};
  auto r = make_report(config);
  EXPECT_EQ(validate_report(r), "");
  r["metrics"]["b"] = 0.1;
  r["metrics"]["a"] = std::numeric_limits<double>::quiet_NaN();
  r["metrics"]["grp"] = {{"z", 1.0 / 3.0}, {"y", nullptr}};
  const auto text = dump_report(r);
  EXPECT_EQ(text, dump_report(Json::parse(dump_report(r))));
  EXPECT_NE(text.find("\"a\": null"), std::string::npos);
  EXPECT_NE(text.find("0.33333333333333331"), std::string::npos);
  EXPECT_LT(text.find("\"a\""), text.find("\"b\""));
  EXPECT_NE(text.find("\n  \"config\": {"), std::string::npos);
  const auto parsed = Json::parse(text);
  EXPECT_EQ(parsed["metrics"]["grp"]["z"].get<double>(), 1.0 / 3.0);
  EXPECT_EQ(validate_report(parsed), "");
}

TEST(Report, ValidationCatchesStructuralErrors) {
  const Json config = {{"invocation", {"untangle"}}, {"seed", 1}};
  auto broken = [&](auto mutate) {
    auto r = make_report(config);
    mutate(r);
    return !validate_report(r).empty();
  };
  EXPECT_TRUE(broken([](Json& r) { r.erase("metrics"); }));
  EXPECT_TRUE(broken([](Json& r) { r["schema_version"] = 2; }));
  EXPECT_TRUE(broken([](Json& r) { r["config"].erase("seed"); }));
  EXPECT_TRUE(broken([](Json& r) { r["config"]["invocation"] = "x"; }));
  EXPECT_TRUE(broken([](Json& r) { r["metrics"]["m"] = Json::array(); }));
  EXPECT_TRUE(broken([](Json& r) { r["per_severity"] = Json::object(); }));
  EXPECT_TRUE(broken([](Json& r) { r["disentanglement"] = {{"corr_ua_ue", 0.1}}; }));
  EXPECT_TRUE(broken([](Json& r) { r["per_sample"] = 3; }));
  EXPECT_FALSE(broken([](Json& r) {
    r["disentanglement"] = {{"corr_ua_ue", 0.1}, {"corr_ua_gtA", 0.2}, {"corr_ue_proxyE", nullptr},
                            {"corr_ua_proxyE", 0.0}, {"corr_ue_gtA", -0.1}};
  }));
}

TEST(Report, CsvForms) {
  auto r = make_report({{"invocation", {"untangle"}}, {"seed", 1}});
  r["metrics"]["auroc"] = 0.75;
  r["metrics"]["missing"] = nullptr;
  r["metrics"]["grp"] = {{"x", 1}};
  EXPECT_EQ(report_to_csv(r), "key,value\nmetrics.auroc,0.75\nmetrics.grp.x,1\nmetrics.missing,\n");
  r["per_sample"] = Json::array({{{"id", "a,b"}, {"v", 0.5}}, {{"id", "c"}, {"v", nullptr}}});
  EXPECT_EQ(report_to_csv(r), "id,v\n\"a,b\",0.5\nc,\n");
}
