#include <cmath>
#include <cstring>
#include <numbers>

#include "test_util.hpp"

using namespace mapvec;
using mapvec::testing::fixture;
using mapvec::testing::make_instance;

namespace {

Polyline points_from(const io::json& j) {
  Polyline out;
  for (const auto& p : j) out.push_back({p[0].get<double>(), p[1].get<double>()});
  return out;
}

void expect_bias_near(const HeadBias& got, const io::json& want, double tol) {
  ASSERT_EQ(got.size(), want.size());
  for (std::size_t h = 0; h < got.size(); ++h) {
    ASSERT_EQ(got[h].rows(), want[h].size());
    for (std::size_t i = 0; i < got[h].rows(); ++i) {
      for (std::size_t j = 0; j < got[h].cols(); ++j) {
        EXPECT_NEAR(got[h](i, j), want[h][i][j].get<double>(), tol) << h << "," << i << "," << j;
      }
    }
  }
}

AttentionWeights random_attention(Rng& rng, std::size_t d, std::size_t heads) {
  auto lin = [&] {
    Linear l{Matrix(d, d), std::vector<double>(d)};
    for (std::size_t r = 0; r < d; ++r) {
      for (std::size_t c = 0; c < d; ++c) l.weight(r, c) = rng.uniform(-0.5, 0.5);
    }
    for (double& b : l.bias) b = rng.uniform(-0.1, 0.1);
    return l;
  };
  AttentionWeights w;
  w.heads = heads;
  w.q = lin();
  w.k = lin();
  w.v = lin();
  w.out = lin();
  return w;
}

Matrix random_matrix(Rng& rng, std::size_t r, std::size_t c) {
  Matrix m(r, c);
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) m(i, j) = rng.normal();
  }
  return m;
}

bool bitwise_equal(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) {
      const double x = a(i, j), y = b(i, j);
      if (std::memcmp(&x, &y, sizeof(double)) != 0) return false;
    }
  }
  return true;
}

}  // namespace

TEST(Spe, Examples) {
  const SpeConfig cfg{8, 10000.0};
  const double zero = 0.0;
  const auto e0 = spe(std::span(&zero, 1), cfg);
  ASSERT_EQ(e0.size(), 8u);
  for (std::size_t k = 0; k < 8; k += 2) {
    EXPECT_EQ(e0[k], 0.0);
    EXPECT_EQ(e0[k + 1], 1.0);
  }
  const double v = 3.7;
  const auto e = spe(std::span(&v, 1), cfg);
  for (std::size_t k = 0; k < 8; k += 2) EXPECT_NEAR(e[k] * e[k] + e[k + 1] * e[k + 1], 1.0, 1e-15);
  const double pi = std::numbers::pi;
  const auto e2 = spe(std::span(&pi, 1), SpeConfig{2, 10000.0});
  EXPECT_NEAR(e2[0], 0.0, 1e-15);
  EXPECT_EQ(e2[1], -1.0);
  EXPECT_THROW(spe(std::span(&v, 1), SpeConfig{3, 10000.0}), ValidationError);
}

TEST(RelPt, Examples) {
  const Polyline pts{{1.0, 0.5}, {0.0, 0.5}};
  const auto f = rel_pt(pts);
  EXPECT_EQ(f.at(0, 0)[0], 0.0);
  EXPECT_EQ(f.at(0, 0)[1], 0.0);
  EXPECT_DOUBLE_EQ(f.at(0, 1)[0], std::log(2.0));
  EXPECT_EQ(f.at(0, 1)[1], 0.0);
  EXPECT_DOUBLE_EQ(f.at(1, 0)[0], std::log(kRelLogEps));
}

TEST(RelDir, Examples) {
  const std::vector<double> t{1.0, 0.0};
  const auto m = rel_dir_from_turning(t);
  EXPECT_EQ(m(0, 0), 0.0);
  EXPECT_EQ(m(0, 1), 1.0);
  EXPECT_EQ(m(1, 0), -1.0);
  EXPECT_EQ(m(1, 1), 0.0);

  // Open straight line: turning is 0 at the endpoints and 1 inside.
  const Polyline straight{{0, 0}, {1, 0}, {2, 0}, {3, 0}};
  const auto open = rel_dir(edge_directions(straight, false), false);
  const double t_open[] = {0.0, 1.0, 1.0, 0.0};
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(open(i, j), t_open[i] - t_open[j]);
  }
}

TEST(RelSd, Examples) {
  const auto a = make_instance(MapClass::lane_divider, Polyline{{0, 0}, {1, 0}}, false, 0.9);
  const auto b = make_instance(MapClass::lane_divider, Polyline{{0, 2.5}, {1, 2.5}}, false, 0.4);
  const auto c = make_instance(MapClass::lane_divider, Polyline{{5, 5}, {6, 5}}, false, 0.4);
  const std::vector<MapInstance> inst{a, b, c};
  const auto m = rel_sd(inst);
  EXPECT_EQ(m(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(m(0, 1), 2.5);
  EXPECT_DOUBLE_EQ(m(1, 0), -2.5);
  EXPECT_EQ(m(1, 2), 0.0);  // equal scores
}

TEST(RelationBias, ZeroWeightsGiveZeroBias) {
  const SpeConfig cfg{4, 10000.0};
  RelationWeights w{Linear{Matrix(2, 12), std::vector<double>(2, 0.0)}};
  const Polyline pts{{0.1, 0.2}, {0.3, 0.5}, {0.6, 0.4}};
  for (const auto& m : point_relation_bias(pts, false, w, cfg)) {
    for (std::size_t i = 0; i < 3; ++i) {
      for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(m(i, j), 0.0);
    }
  }
  RelationWeights wi{Linear{Matrix(2, 4), std::vector<double>(2, 0.0)}};
  const std::vector<MapInstance> inst{make_instance(MapClass::lane_divider, pts), make_instance(MapClass::lane_divider, pts)};
  for (const auto& m : instance_relation_bias(inst, wi, cfg)) EXPECT_EQ(m(0, 1), 0.0);
  RelationWeights wrong{Linear{Matrix(2, 5), std::vector<double>(2, 0.0)}};
  EXPECT_THROW(point_relation_bias(pts, false, wrong, cfg), ValidationError);
}

TEST(RelationBias, PointBiasMatchesReferenceScript) {
  const auto j = fixture("point_bias_3pt.json");
  const SpeConfig cfg{j["spe"]["dim"].get<std::size_t>(), j["spe"]["temperature"].get<double>()};
  const auto w = RelationWeights{io::linear_from_json(j["projection"], "projection")};
  const auto pts = points_from(j["points"]);
  const auto t = turning_similarity(edge_directions(pts, false), false);
  mapvec::testing::expect_near_all(t, j["turning"].get<std::vector<double>>(), 1e-15);
  expect_bias_near(point_relation_bias(pts, j["closed"].get<bool>(), w, cfg), j["expected"], 1e-12);
}

TEST(RelationBias, InstanceBiasMatchesReferenceScript) {
  const auto j = fixture("instance_bias_3inst.json");
  const SpeConfig cfg{j["spe"]["dim"].get<std::size_t>(), j["spe"]["temperature"].get<double>()};
  const auto w = RelationWeights{io::linear_from_json(j["projection"], "projection")};
  std::vector<MapInstance> inst;
  for (std::size_t i = 0; i < j["instances"].size(); ++i) {
    inst.push_back(make_instance(MapClass::lane_divider, points_from(j["instances"][i]), false,
                                 j["scores"][i].get<double>()));
  }
  expect_bias_near(instance_relation_bias(inst, w, cfg), j["expected"], 1e-12);
}

TEST(RelationBias, UnbiasedDiagonalsAndAntisymmetryOnRandomInputs) {
  Rng rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + trial % 20;
    Polyline pts;
    for (std::size_t i = 0; i < n; ++i) pts.push_back({rng.uniform(), rng.uniform()});
    const bool closed = trial % 2 == 1 && n >= 3;
    const auto pt = rel_pt(pts);
    const auto dir = rel_dir(edge_directions(pts, closed), closed);
    for (std::size_t i = 0; i < n; ++i) {
      EXPECT_EQ(pt.at(i, i)[0], 0.0);
      EXPECT_EQ(pt.at(i, i)[1], 0.0);
      EXPECT_EQ(dir(i, i), 0.0);
      for (std::size_t j = 0; j < n; ++j) EXPECT_EQ(dir(i, j), -dir(j, i));
    }
    std::vector<MapInstance> inst;
    for (int k = 0; k < 5; ++k) {
      Polyline p;
      for (int q = 0; q < 4; ++q) p.push_back({rng.normal(), rng.normal()});
      inst.push_back(make_instance(MapClass::lane_divider, p, false, k == 3 ? inst[0].score : rng.uniform()));
    }
    const auto sd = rel_sd(inst);
    for (std::size_t a = 0; a < 5; ++a) {
      EXPECT_EQ(sd(a, a), 0.0);
      for (std::size_t b = 0; b < 5; ++b) EXPECT_EQ(sd(a, b), -sd(b, a));
    }
  }
}

TEST(RelationBias, NonNegative) {
  Rng rng(12);
  const SpeConfig cfg{8, 10000.0};
  Linear proj{Matrix(3, 24), std::vector<double>(3)};
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t c = 0; c < 24; ++c) proj.weight(r, c) = rng.normal();
    proj.bias[r] = rng.normal();
  }
  Polyline pts;
  for (int i = 0; i < 10; ++i) pts.push_back({rng.uniform(), rng.uniform()});
  for (const auto& m : point_relation_bias(pts, false, RelationWeights{proj}, cfg)) {
    for (std::size_t i = 0; i < m.rows(); ++i) {
      for (std::size_t j = 0; j < m.cols(); ++j) EXPECT_GE(m(i, j), 0.0);
    }
  }
}

TEST(Attention, ZeroBiasIsBitwisePlain) {
  Rng rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    const auto w = random_attention(rng, 8, 2);
    const auto x = random_matrix(rng, 1 + trial % 9, 8);
    const HeadBias zero(2, Matrix(x.rows(), x.rows()));
    EXPECT_TRUE(bitwise_equal(relation_self_attention(x, zero, w), plain_self_attention(x, w)));
  }
}

TEST(Attention, RowsSumToOneAndSaturate) {
  Rng rng(22);
  const auto w = random_attention(rng, 8, 2);
  const auto x = random_matrix(rng, 6, 8);
  HeadBias bias(2, Matrix(6, 6));
  for (std::size_t i = 0; i < 6; ++i) bias[0](i, (i + 2) % 6) = 1000.0;
  for (std::size_t h = 0; h < 2; ++h) {
    const auto a = attention_weights(x, &bias, w, h);
    for (std::size_t i = 0; i < 6; ++i) {
      double sum = 0.0;
      for (std::size_t j = 0; j < 6; ++j) sum += a(i, j);
      EXPECT_NEAR(sum, 1.0, 1e-6);
      if (h == 0) {
        EXPECT_GT(a(i, (i + 2) % 6), 0.999);
      }
    }
  }
}

TEST(Attention, SingleTokenReturnsProjectedValue) {
  Rng rng(23);
  const auto w = random_attention(rng, 4, 2);
  const auto x = random_matrix(rng, 1, 4);
  const auto y = plain_self_attention(x, w);
  const auto v = w.v.apply(x.row(0));
  const auto expect = w.out.apply(v);
  for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(y(0, c), expect[c], 1e-14);
}

TEST(Attention, PermutationEquivariance) {
  Rng rng(24);
  const auto w = random_attention(rng, 8, 2);
  const auto x = random_matrix(rng, 5, 8);
  HeadBias bias(2, Matrix(5, 5));
  for (auto& m : bias) {
    for (std::size_t i = 0; i < 5; ++i) {
      for (std::size_t j = 0; j < 5; ++j) m(i, j) = rng.uniform(0.0, 2.0);
    }
  }
  const std::vector<std::size_t> perm{2, 4, 0, 3, 1};
  Matrix xp(5, 8);
  HeadBias bp(2, Matrix(5, 5));
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t c = 0; c < 8; ++c) xp(i, c) = x(perm[i], c);
    for (std::size_t h = 0; h < 2; ++h) {
      for (std::size_t j = 0; j < 5; ++j) bp[h](i, j) = bias[h](perm[i], perm[j]);
    }
  }
  const auto y = relation_self_attention(x, bias, w);
  const auto yp = relation_self_attention(xp, bp, w);
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t c = 0; c < 8; ++c) EXPECT_NEAR(yp(i, c), y(perm[i], c), 1e-12);
  }
}

class DecoderFixture : public ::testing::Test {
 protected:
  void SetUp() override {
    j = fixture("decoder_layer.json");
    qs.n_instances = j["n_instances"].get<std::size_t>();
    qs.n_points = j["n_points"].get<std::size_t>();
    qs.embeddings = io::matrix_from_json(j["embeddings"], "embeddings");
    qs.reference_points = points_from(j["reference_points"]);
    for (const auto& p : j["class_probs"]) qs.class_probs.push_back({p[0].get<double>(), p[1].get<double>(), p[2].get<double>()});
    weights = io::decoder_layer_from_json(j["weights"], "weights");
    point_w = io::relation_from_json(j["point_relation"], "point_relation");
    instance_w = io::relation_from_json(j["instance_relation"], "instance_relation");
    point_spe = {j["point_spe"]["dim"].get<std::size_t>(), j["point_spe"]["temperature"].get<double>()};
    instance_spe = {j["instance_spe"]["dim"].get<std::size_t>(), j["instance_spe"]["temperature"].get<double>()};
  }

  void expect_embeddings(const Matrix& got, const io::json& want, double tol) {
    ASSERT_EQ(got.rows(), want.size());
    for (std::size_t r = 0; r < got.rows(); ++r) {
      for (std::size_t c = 0; c < got.cols(); ++c) EXPECT_NEAR(got(r, c), want[r][c].get<double>(), tol);
    }
  }

  io::json j;
  DecoderQuerySet qs;
  DecoderLayerWeights weights;
  RelationWeights point_w, instance_w;
  SpeConfig point_spe, instance_spe;
};

TEST_F(DecoderFixture, BiasesMatchReferenceScript) {
  const auto b = compute_relation_biases(qs, point_w, instance_w, point_spe, instance_spe);
  expect_bias_near(b.point[0], j["expected_point_bias_instance0"], 1e-12);
  expect_bias_near(b.instance, j["expected_instance_bias"], 1e-12);
}

TEST_F(DecoderFixture, ForwardMatchesReferenceScript) {
  const auto b = compute_relation_biases(qs, point_w, instance_w, point_spe, instance_spe);
  expect_embeddings(decoupled_decoder_layer(qs, b, weights).embeddings, j["expected"], 1e-10);
  expect_embeddings(decoupled_decoder_layer(qs, nullptr, nullptr, weights).embeddings, j["expected_vanilla"], 1e-10);
}

TEST_F(DecoderFixture, ZeroBiasesEqualVanillaLayer) {
  RelationBiases zero;
  zero.point.assign(qs.n_instances, HeadBias(weights.point_attention.heads, Matrix(qs.n_points, qs.n_points)));
  zero.instance = HeadBias(weights.instance_attention.heads, Matrix(qs.n_instances, qs.n_instances));
  EXPECT_TRUE(bitwise_equal(decoupled_decoder_layer(qs, zero, weights).embeddings,
                            decoupled_decoder_layer(qs, nullptr, nullptr, weights).embeddings));
}

TEST_F(DecoderFixture, InstancePermutationEquivariance) {
  const std::vector<std::size_t> perm{2, 0, 3, 1};
  DecoderQuerySet p = qs;
  const std::size_t np = qs.n_points;
  for (std::size_t i = 0; i < qs.n_instances; ++i) {
    p.class_probs[i] = qs.class_probs[perm[i]];
    for (std::size_t k = 0; k < np; ++k) {
      p.reference_points[i * np + k] = qs.reference_points[perm[i] * np + k];
      for (std::size_t c = 0; c < qs.d_model(); ++c) p.embeddings(i * np + k, c) = qs.embeddings(perm[i] * np + k, c);
    }
  }
  const auto y = decoupled_decoder_layer(qs, compute_relation_biases(qs, point_w, instance_w, point_spe, instance_spe), weights);
  const auto yp = decoupled_decoder_layer(p, compute_relation_biases(p, point_w, instance_w, point_spe, instance_spe), weights);
  for (std::size_t i = 0; i < qs.n_instances; ++i) {
    for (std::size_t k = 0; k < np; ++k) {
      for (std::size_t c = 0; c < qs.d_model(); ++c) {
        EXPECT_NEAR(yp.embeddings(i * np + k, c), y.embeddings(perm[i] * np + k, c), 1e-12);
      }
    }
  }
}

TEST_F(DecoderFixture, ShapeMismatchThrows) {
  DecoderQuerySet bad = qs;
  bad.class_probs.pop_back();
  EXPECT_THROW(decoupled_decoder_layer(bad, nullptr, nullptr, weights), ValidationError);
}
