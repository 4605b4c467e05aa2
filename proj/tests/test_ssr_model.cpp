#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <unistd.h>

#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "ssr/ssr_model.hpp"

namespace {

std::string temp_path(const char* stem) {
  return (std::filesystem::temp_directory_path() /
          (std::string(stem) + "-" + std::to_string(::getpid()) + ".bin"))
      .string();
}

ssr::SSRConfig tiny_ssr_cfg(int d = 16, ssr::SSRMode mode = ssr::SSRMode::kAR) {
  ssr::SSRConfig cfg;
  cfg.tf.d_model = d;
  cfg.tf.n_heads = 2;
  cfg.tf.n_blocks = 2;
  cfg.tf.d_ff = 32;
  cfg.tf.max_positions = 16;
  cfg.tf.dropout = 0.0;
  cfg.mode = mode;
  cfg.max_sentences = 8;
  return cfg;
}

bool bitwise_equal(const ssr::MatF& a, const ssr::MatF& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         (a.array() == b.array()).all();
}

double cosine(const ssr::MatF& a, const ssr::MatF& b) {
  return a.row(0).dot(b.row(0)) / (a.norm() * b.norm());
}

// Unit-norm random rows grouped into equal-length paragraphs.
ssr::VectorCache toy_cache(int n_paragraphs, int m, int d, std::uint64_t seed) {
  ssr::Rng rng(seed);
  ssr::VectorCache c;
  c.dim = d;
  c.vectors = ssr::randn<float>(n_paragraphs * m, d, rng, 1.0);
  for (int p = 0; p < n_paragraphs; ++p)
    for (int s = 0; s < m; ++s) {
      c.paragraph_ids.push_back(static_cast<std::uint32_t>(p));
      c.sentence_indices.push_back(static_cast<std::uint32_t>(s));
      c.vectors.row(p * m + s).normalize();
    }
  return c;
}

// Loss value for a detached (zhat, ztgt) pair under the cosine objective.
template <class S>
S cosine_loss_value(const ssr::Mat<S>& zhat, const ssr::Mat<S>& ztgt,
                    const std::vector<int>& positions) {
  ssr::Tape<S> t;
  return ssr::ssr_cosine_loss(t, ssr::make_const(zhat), ssr::make_const(ztgt),
                              positions)
      ->value(0, 0);
}

template <class S>
S contrastive_loss_value(const ssr::Mat<S>& zhat, const ssr::Mat<S>& ztgt,
                         const std::vector<ssr::Mat<S>>& negs,
                         const std::vector<int>& positions) {
  ssr::Tape<S> t;
  return ssr::ssr_contrastive_loss(t, ssr::make_const(zhat),
                                   ssr::make_const(ztgt), negs, positions)
      ->value(0, 0);
}

}  // namespace

TEST_CASE("ssr_model: config validation") {
  ssr::SSRConfig cfg = tiny_ssr_cfg();
  CHECK_NOTHROW(cfg.validate());

  ssr::SSRConfig bad = cfg;
  bad.max_sentences = 1;
  CHECK_THROWS_AS(bad.validate(), ssr::ContractError);

  bad = cfg;
  bad.mask_rate = 0.0;
  CHECK_THROWS_AS(bad.validate(), ssr::ContractError);
  bad.mask_rate = 1.0;
  CHECK_THROWS_AS(bad.validate(), ssr::ContractError);
  bad.mask_rate = -0.2;
  CHECK_THROWS_AS(bad.validate(), ssr::ContractError);

  bad = cfg;
  bad.n_negatives = 0;
  CHECK_THROWS_AS(bad.validate(), ssr::ContractError);

  bad = cfg;
  bad.tf.d_model = 15;  // not divisible by n_heads
  CHECK_THROWS_AS(bad.validate(), ssr::Error);
}

TEST_CASE("ssr_model: mask plan follows the rounding law") {
  ssr::Rng rng(5);
  for (double rate : {0.15, 0.5, 0.9}) {
    for (int m = 1; m <= 128; ++m) {
      ssr::MaskPlan plan = ssr::make_mask_plan(m, rate, rng);
      const std::size_t want = std::max<std::size_t>(
          1, static_cast<std::size_t>(
                 std::lround(rate * static_cast<double>(m))));
      CHECK(plan.m == m);
      CHECK(plan.masked.size() == want);
      std::set<int> uniq(plan.masked.begin(), plan.masked.end());
      CHECK(uniq.size() == plan.masked.size());
      CHECK(std::is_sorted(plan.masked.begin(), plan.masked.end()));
      CHECK(*uniq.begin() >= 0);
      CHECK(*uniq.rbegin() < m);
    }
  }

  // hand-computed corners of max(1, lround(rate*m))
  CHECK(ssr::make_mask_plan(1, 0.15, rng).masked.size() == 1);   // lround(.15)=0
  CHECK(ssr::make_mask_plan(7, 0.15, rng).masked.size() == 1);   // 1.05 -> 1
  CHECK(ssr::make_mask_plan(10, 0.15, rng).masked.size() == 2);  // 1.5 -> 2
  CHECK(ssr::make_mask_plan(3, 0.5, rng).masked.size() == 2);    // 1.5 -> 2
  CHECK(ssr::make_mask_plan(2, 0.9, rng).masked.size() == 2);    // 1.8 -> 2

  // every slot is reachable
  std::set<int> seen;
  for (int i = 0; i < 200; ++i)
    for (int v : ssr::make_mask_plan(10, 0.15, rng).masked) seen.insert(v);
  CHECK(seen.size() == 10);

  CHECK_THROWS_AS(ssr::make_mask_plan(0, 0.15, rng), ssr::ContractError);
  CHECK_THROWS_AS(ssr::make_mask_plan(5, 0.0, rng), ssr::ContractError);
  CHECK_THROWS_AS(ssr::make_mask_plan(5, 1.0, rng), ssr::ContractError);
}

TEST_CASE("ssr_model: inputs add the sentence positional table") {
  ssr::Rng rng(3);
  auto model = ssr::SSRModel<float>::make(tiny_ssr_cfg(8), rng);
  const ssr::MatF Z = ssr::randn<float>(3, 8, rng, 1.0);

  ssr::Tape<float> t;
  auto h0 = ssr::ssr_inputs(t, ssr::make_const(Z), model.pos);
  ssr::MatF want = Z + model.pos->value.topRows(3);
  CHECK(bitwise_equal(h0->value, want));

  // a masked slot carries exactly its positional row
  auto zin = ssr::zero_rows(t, ssr::make_const(Z), {1});
  auto h0m = ssr::ssr_inputs(t, zin, model.pos);
  CHECK(bitwise_equal(ssr::MatF(h0m->value.row(1)),
                      ssr::MatF(model.pos->value.row(1))));

  // full-length paragraph fits; one more row does not
  CHECK_NOTHROW(ssr::ssr_inputs(t, ssr::make_const(ssr::randn<float>(8, 8, rng, 1.0)),
                                model.pos));
  CHECK_THROWS_AS(ssr::ssr_inputs(
                      t, ssr::make_const(ssr::randn<float>(9, 8, rng, 1.0)),
                      model.pos),
                  ssr::RangeError);
}

TEST_CASE("ssr_model: parameters, checkpoint round trip, scalar cast") {
  ssr::Rng rng(11);
  auto model = ssr::SSRModel<float>::make(tiny_ssr_cfg(), rng);
  auto ps = model.params();
  // pos + 16 tensors per block + head {w, b}
  CHECK(ps.size() == 1 + 16 * 2 + 2);
  CHECK(ps.front().first == "ssr.pos");
  bool saw_block = false, saw_head = false;
  for (const auto& [name, v] : ps) {
    if (name == "ssr.stack.block0.attn.wq") saw_block = true;
    if (name == "ssr.head.w") {
      saw_head = true;
      CHECK(v->value.rows() == 16);
      CHECK(v->value.cols() == 16);  // g' maps d -> d
    }
  }
  CHECK(saw_block);
  CHECK(saw_head);

  const std::string path = temp_path("ssr-ckpt");
  ssr::save_checkpoint(path, ps);
  auto loaded = ssr::load_ssr(path, tiny_ssr_cfg());
  const ssr::MatF Z = ssr::randn<float>(4, 16, rng, 1.0);
  CHECK(bitwise_equal(ssr::predict_vectors(model, Z),
                      ssr::predict_vectors(loaded, Z)));

  // strict loader rejects a mismatched architecture
  ssr::SSRConfig other = tiny_ssr_cfg();
  other.tf.d_ff = 64;
  CHECK_THROWS_AS(ssr::load_ssr(path, other), ssr::FormatError);
  std::filesystem::remove(path);

  auto dbl = model.template cast<double>();
  CHECK(dbl.pos->value(0, 0) == static_cast<double>(model.pos->value(0, 0)));
  CHECK(dbl.cfg.max_sentences == model.cfg.max_sentences);
}

TEST_CASE("ssr_model: AR forward is causal") {
  ssr::Rng rng(17);
  auto model = ssr::SSRModel<float>::make(tiny_ssr_cfg(), rng);
  const ssr::MatF Z = ssr::randn<float>(6, 16, rng, 1.0);
  const ssr::MatF base = ssr::predict_vectors(model, Z);
  CHECK(base.rows() == 6);
  CHECK(base.cols() == 16);

  for (int j = 0; j < 6; ++j) {
    ssr::MatF zp = Z;
    zp.row(j).array() += 1.0f;
    const ssr::MatF out = ssr::predict_vectors(model, zp);
    for (int r = 0; r < j; ++r)  // zero tolerance before the edit
      CHECK(bitwise_equal(ssr::MatF(out.row(r)), ssr::MatF(base.row(r))));
    CHECK_FALSE(bitwise_equal(ssr::MatF(out.row(j)), ssr::MatF(base.row(j))));
  }
}

TEST_CASE("ssr_model: NonAR masked slot ignores its own content") {
  ssr::Rng rng(19);
  auto model =
      ssr::SSRModel<float>::make(tiny_ssr_cfg(16, ssr::SSRMode::kNonAR), rng);
  const ssr::MatF Z = ssr::randn<float>(5, 16, rng, 1.0);

  for (int i = 0; i < 5; ++i) {
    const ssr::MatF pred = ssr::predict_masked_vector(model, Z, i);
    ssr::MatF zp = Z;
    zp.row(i).setConstant(100.0f);
    CHECK(bitwise_equal(pred, ssr::predict_masked_vector(model, zp, i)));
  }

  // but it does see the rest of the paragraph, in both directions
  ssr::MatF zq = Z;
  zq.row(4).array() -= 3.0f;
  CHECK_FALSE(bitwise_equal(ssr::predict_masked_vector(model, Z, 2),
                            ssr::predict_masked_vector(model, zq, 2)));
  zq = Z;
  zq.row(0).array() += 3.0f;
  CHECK_FALSE(bitwise_equal(ssr::predict_masked_vector(model, Z, 2),
                            ssr::predict_masked_vector(model, zq, 2)));
}

TEST_CASE("ssr_model: mode and plan contracts") {
  ssr::Rng rng(23);
  auto ar = ssr::SSRModel<float>::make(tiny_ssr_cfg(), rng);
  auto nonar =
      ssr::SSRModel<float>::make(tiny_ssr_cfg(16, ssr::SSRMode::kNonAR), rng);
  const ssr::MatF Z = ssr::randn<float>(4, 16, rng, 1.0);

  CHECK_THROWS_AS(ssr::predict_next_vector(nonar, Z), ssr::ContractError);
  CHECK_THROWS_AS(ssr::predict_next_vector(ar, ssr::MatF(0, 16)),
                  ssr::DegenerateInputError);
  CHECK_NOTHROW(ssr::predict_next_vector(ar, ssr::randn<float>(7, 16, rng, 1.0)));
  CHECK_THROWS_AS(ssr::predict_next_vector(ar, ssr::randn<float>(8, 16, rng, 1.0)),
                  ssr::RangeError);

  CHECK_THROWS_AS(ssr::predict_masked_vector(ar, Z, 1), ssr::ContractError);
  CHECK_THROWS_AS(ssr::predict_masked_vector(nonar, Z, -1), ssr::RangeError);
  CHECK_THROWS_AS(ssr::predict_masked_vector(nonar, Z, 4), ssr::RangeError);

  ssr::MaskPlan plan{4, {1}};
  ssr::Tape<float> t;
  CHECK_THROWS_AS(
      ssr::ssr_forward(t, ar, ssr::make_const(Z), &plan, rng, false),
      ssr::ContractError);
  CHECK_THROWS_AS(
      ssr::ssr_forward(t, nonar, ssr::make_const(Z), nullptr, rng, false),
      ssr::ContractError);
  ssr::MaskPlan stale{3, {1}};
  CHECK_THROWS_AS(
      ssr::ssr_forward(t, nonar, ssr::make_const(Z), &stale, rng, false),
      ssr::ContractError);
}

TEST_CASE("ssr_model: AR teacher targets") {
  ssr::Rng rng(29);
  const ssr::MatF Z = ssr::randn<float>(5, 8, rng, 1.0);
  auto tg = ssr::ssr_ar_targets(Z);
  CHECK(bitwise_equal(tg.inputs, Z));
  CHECK(tg.positions == std::vector<int>{0, 1, 2, 3});
  for (int t = 0; t < 4; ++t)
    CHECK(bitwise_equal(ssr::MatF(tg.targets.row(t)), ssr::MatF(Z.row(t + 1))));
  CHECK(bitwise_equal(ssr::MatF(tg.targets.row(4)), ssr::MatF(Z.row(4))));

  const ssr::MatF Z2 = ssr::randn<float>(2, 8, rng, 1.0);
  auto tg2 = ssr::ssr_ar_targets(Z2);
  CHECK(tg2.positions == std::vector<int>{0});
  CHECK(bitwise_equal(ssr::MatF(tg2.targets.row(0)), ssr::MatF(Z2.row(1))));

  CHECK_THROWS_AS(ssr::ssr_ar_targets(ssr::MatF(ssr::randn<float>(1, 8, rng, 1.0))),
                  ssr::DegenerateInputError);
}

TEST_CASE("ssr_model: cosine loss hits its corners") {
  ssr::MatF zhat(3, 4), ztgt(3, 4);
  zhat.setZero();
  ztgt.setZero();
  zhat(0, 0) = 2.0f;  // parallel to target, different scale
  ztgt(0, 0) = 0.5f;
  zhat(1, 1) = 1.0f;  // orthogonal
  ztgt(1, 2) = 1.0f;
  zhat(2, 3) = 1.0f;  // antiparallel
  ztgt(2, 3) = -3.0f;

  CHECK(cosine_loss_value<float>(zhat, ztgt, {0}) == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(cosine_loss_value<float>(zhat, ztgt, {1}) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(cosine_loss_value<float>(zhat, ztgt, {2}) == doctest::Approx(2.0).epsilon(1e-6));
  CHECK(cosine_loss_value<float>(zhat, ztgt, {0, 1, 2}) ==
        doctest::Approx(1.0).epsilon(1e-6));
  CHECK(cosine_loss_value<float>(zhat, ztgt, {0, 2}) ==
        doctest::Approx(1.0).epsilon(1e-6));

  ssr::Tape<float> t;
  CHECK_THROWS_AS(
      ssr::ssr_cosine_loss(t, ssr::make_const(zhat), ssr::make_const(ztgt), {}),
      ssr::DegenerateInputError);
  CHECK_THROWS_AS(
      ssr::ssr_cosine_loss(t, ssr::make_const(zhat),
                           ssr::make_const(ssr::MatF(ssr::MatF::Zero(2, 4))),
                           {0}),
      ssr::DimensionError);
}

TEST_CASE("ssr_model: contrastive loss hits its corners") {
  ssr::MatF u(1, 4), v(1, 4);
  u.setZero();
  u(0, 0) = 1.0f;

  ssr::MatF ortho(2, 4);  // both rows orthogonal to u
  ortho.setZero();
  ortho(0, 1) = 1.0f;
  ortho(1, 2) = 2.0f;
  ssr::MatF parallel(2, 4);  // both rows parallel to u
  parallel.setZero();
  parallel(0, 0) = 0.5f;
  parallel(1, 0) = 4.0f;

  v = u;  // cos = 1, negatives 0: loss = 1
  CHECK(contrastive_loss_value<float>(u, v, {ortho}, {0}) ==
        doctest::Approx(1.0).epsilon(1e-6));
  v.setZero();
  v(0, 3) = 2.0f;  // cos = 0, negatives 0: loss = 2
  CHECK(contrastive_loss_value<float>(u, v, {ortho}, {0}) ==
        doctest::Approx(2.0).epsilon(1e-6));
  v = -u;  // cos = -1, negatives 1: loss = 4
  CHECK(contrastive_loss_value<float>(u, v, {parallel}, {0}) ==
        doctest::Approx(4.0).epsilon(1e-6));

  // mean over positions: corners 1 and 4 average to 2.5
  ssr::MatF zhat(2, 4), ztgt(2, 4);
  zhat.setZero();
  ztgt.setZero();
  zhat(0, 0) = 1.0f;
  ztgt(0, 0) = 1.0f;
  zhat(1, 0) = 1.0f;
  ztgt(1, 0) = -1.0f;
  CHECK(contrastive_loss_value<float>(zhat, ztgt, {ortho, parallel}, {0, 1}) ==
        doctest::Approx(2.5).epsilon(1e-6));

  ssr::Tape<float> t;
  auto zh = ssr::make_const(zhat);
  auto zt = ssr::make_const(ztgt);
  CHECK_THROWS_AS(ssr::ssr_contrastive_loss(t, zh, zt, {ortho}, {0, 1}),
                  ssr::ContractError);  // one set for two positions
  CHECK_THROWS_AS(
      ssr::ssr_contrastive_loss(t, zh, zt, {ssr::MatF(0, 4)}, {0}),
      ssr::ContractError);  // empty negative set
  CHECK_THROWS_AS(
      ssr::ssr_contrastive_loss(t, zh, zt, {ssr::MatF(ssr::MatF::Zero(2, 3))},
                                {0}),
      ssr::ContractError);  // wrong width
  CHECK_THROWS_AS(
      ssr::ssr_contrastive_loss(
          t, zh, zt, {ortho, ssr::MatF(ssr::MatF::Zero(3, 4))}, {0, 1}),
      ssr::ContractError);  // ragged count across sets
  CHECK_THROWS_AS(ssr::ssr_contrastive_loss(t, zh, zt, {}, {}),
                  ssr::DegenerateInputError);
}

TEST_CASE("ssr_model: losses stay inside their ranges") {
  ssr::Rng rng(31);
  for (int trial = 0; trial < 500; ++trial) {
    const ssr::MatF zhat = ssr::randn<float>(5, 8, rng, 1.0);
    const ssr::MatF ztgt = ssr::randn<float>(5, 8, rng, 1.0);
    const std::vector<int> positions{0, 2, 4};
    const float lc = cosine_loss_value<float>(zhat, ztgt, positions);
    CHECK(lc >= -1e-6f);
    CHECK(lc <= 2.0f + 1e-6f);
    std::vector<ssr::MatF> negs;
    for (std::size_t k = 0; k < positions.size(); ++k)
      negs.push_back(ssr::randn<float>(3, 8, rng, 1.0));
    const float lk = contrastive_loss_value<float>(zhat, ztgt, negs, positions);
    CHECK(lk >= -1e-6f);
    CHECK(lk <= 4.0f + 1e-6f);
  }
}

TEST_CASE("ssr_model: loss gradients agree with finite differences") {
  // float64 throughout: analytic backward vs central differences, and the
  // cosine gradient's orthogonality to its own argument.
  ssr::Rng rng(37);
  const ssr::MatD zhat0 = ssr::randn<double>(4, 6, rng, 0.5);
  const ssr::MatD ztgt0 = ssr::randn<double>(4, 6, rng, 0.5);
  const std::vector<int> positions{0, 1, 3};
  std::vector<ssr::MatD> negs;
  for (std::size_t k = 0; k < positions.size(); ++k)
    negs.push_back(ssr::randn<double>(3, 6, rng, 0.5));

  const double h = 1e-5, atol = 1e-8, rtol = 1e-5;
  auto agree = [&](double a, double b) {
    return std::abs(a - b) <= atol + rtol * std::max(std::abs(a), std::abs(b));
  };

  for (int which : {0, 1}) {
    auto loss_at = [&](const ssr::MatD& zh, const ssr::MatD& zt) {
      return which == 0 ? cosine_loss_value<double>(zh, zt, positions)
                        : contrastive_loss_value<double>(zh, zt, negs, positions);
    };

    ssr::Tape<double> t;
    auto zh = ssr::make_param(zhat0);
    auto zt = ssr::make_param(ztgt0);
    auto loss = which == 0
                    ? ssr::ssr_cosine_loss(t, zh, zt, positions)
                    : ssr::ssr_contrastive_loss(t, zh, zt, negs, positions);
    t.backward(loss);

    for (auto [leaf, base, wrt_zhat] :
         {std::tuple{zh, zhat0, true}, std::tuple{zt, ztgt0, false}}) {
      const ssr::MatD& g = leaf->grad_ref();
      for (Eigen::Index i = 0; i < base.rows(); ++i)
        for (Eigen::Index j = 0; j < base.cols(); ++j) {
          ssr::MatD up = base, dn = base;
          up(i, j) += h;
          dn(i, j) -= h;
          const double fd = wrt_zhat ? (loss_at(up, ztgt0) - loss_at(dn, ztgt0)) / (2 * h)
                                     : (loss_at(zhat0, up) - loss_at(zhat0, dn)) / (2 * h);
          CHECK_MESSAGE(agree(g(i, j), fd),
                        "loss " << which << " leaf " << (wrt_zhat ? "zhat" : "ztgt")
                                << " (" << i << "," << j << "): analytic "
                                << g(i, j) << " vs fd " << fd);
        }
    }

    // row 2 is unsupervised: exactly zero gradient in both leaves
    CHECK(zh->grad_ref().row(2).cwiseAbs().maxCoeff() == 0.0);
    CHECK(zt->grad_ref().row(2).cwiseAbs().maxCoeff() == 0.0);

    // d cos(u, v)/du is orthogonal to u, so each supervised gradient row is too
    for (int p : positions)
      CHECK(std::abs(zh->grad_ref().row(p).dot(zhat0.row(p))) < 1e-10);
  }
}

TEST_CASE("ssr_model: negative sampling excludes the anchor paragraph") {
  const ssr::VectorCache cache = toy_cache(6, 3, 8, 41);

  ssr::Rng rng(43);
  std::set<std::uint32_t> seen;
  for (int trial = 0; trial < 2000; ++trial) {
    auto ns = ssr::sample_negatives(cache, 2, 4, rng);
    CHECK(ns.vectors.rows() == 4);
    CHECK(ns.vectors.cols() == 8);
    REQUIRE(ns.source_paragraphs.size() == 4);
    for (std::size_t k = 0; k < 4; ++k) {
      CHECK(ns.source_paragraphs[k] != 2);
      seen.insert(ns.source_paragraphs[k]);
      // the row really comes from the paragraph it claims
      bool found = false;
      for (Eigen::Index r = 0; r < cache.count(); ++r)
        if (cache.paragraph_ids[static_cast<std::size_t>(r)] ==
                ns.source_paragraphs[k] &&
            bitwise_equal(ssr::MatF(ns.vectors.row(k)),
                          ssr::MatF(cache.vectors.row(r))))
          found = true;
      CHECK(found);
    }
  }
  CHECK(seen == std::set<std::uint32_t>{0, 1, 3, 4, 5});

  ssr::Rng a(7), b(7);
  CHECK(bitwise_equal(ssr::sample_negatives(cache, 0, 5, a).vectors,
                      ssr::sample_negatives(cache, 0, 5, b).vectors));

  const ssr::VectorCache small = toy_cache(2, 3, 8, 47);
  CHECK_NOTHROW(ssr::sample_negatives(small, 0, 3, rng));
  CHECK_THROWS_AS(ssr::sample_negatives(small, 0, 4, rng), ssr::CorpusError);
  CHECK_THROWS_AS(ssr::sample_negatives(small, 0, 0, rng), ssr::ContractError);
}

TEST_CASE("ssr_model: cache paragraph grouping") {
  const ssr::VectorCache cache = toy_cache(6, 3, 8, 53);
  auto groups = ssr::cache_paragraphs(cache);
  REQUIRE(groups.size() == 6);
  for (int p = 0; p < 6; ++p) {
    CHECK(groups[p].pid == static_cast<std::uint32_t>(p));
    CHECK(groups[p].first_row == 3 * p);
    CHECK(groups[p].m == 3);
  }

  CHECK(ssr::cache_paragraphs(ssr::VectorCache{8, {}, {}, ssr::MatF(0, 8)})
            .empty());

  ssr::VectorCache bad = cache;
  bad.paragraph_ids = {0, 0, 0, 1, 1, 1, 0, 0, 0, 2, 2, 2, 3, 3, 3, 4, 4, 4};
  CHECK_THROWS_AS(ssr::cache_paragraphs(bad), ssr::CorpusError);

  bad = cache;
  bad.sentence_indices[0] = 1;  // paragraph must start at sentence 0
  CHECK_THROWS_AS(ssr::cache_paragraphs(bad), ssr::CorpusError);

  bad = cache;
  bad.sentence_indices[2] = 3;  // gap inside a paragraph
  CHECK_THROWS_AS(ssr::cache_paragraphs(bad), ssr::CorpusError);
}

TEST_CASE("ssr_model: AR training memorizes a small cache") {
  const ssr::VectorCache cache = toy_cache(4, 4, 16, 3);
  ssr::SSRConfig cfg = tiny_ssr_cfg();

  auto res = ssr::train_ssr(cache, cfg, ssr::SSRLoss::kCosine, 1000, 7);
  REQUIRE(res.epoch_mean_loss.size() == 250);  // 1000 steps / 4 paragraphs
  CHECK(res.epoch_mean_loss.front() > 0.5);
  CHECK(std::abs(res.epoch_mean_loss.back()) < 0.01);
  CHECK(res.epoch_mean_loss.back() < res.epoch_mean_loss.front());

  double worst = 1.0;
  for (int p = 0; p < 4; ++p) {
    const ssr::MatF Z = cache.vectors.middleRows(4 * p, 4);
    for (int s = 1; s < 4; ++s)
      worst = std::min(worst,
                       cosine(ssr::predict_next_vector(res.model,
                                                       ssr::MatF(Z.topRows(s))),
                              ssr::MatF(Z.row(s))));
  }
  CHECK(worst > 0.99);

  SUBCASE("same seed reproduces byte-identical parameters") {
    auto again = ssr::train_ssr(cache, cfg, ssr::SSRLoss::kCosine, 1000, 7);
    CHECK(again.epoch_mean_loss == res.epoch_mean_loss);
    CHECK(ssr::serialize_checkpoint(again.model.params()) ==
          ssr::serialize_checkpoint(res.model.params()));
    auto other = ssr::train_ssr(cache, cfg, ssr::SSRLoss::kCosine, 1000, 8);
    CHECK(ssr::serialize_checkpoint(other.model.params()) !=
          ssr::serialize_checkpoint(res.model.params()));
  }

  SUBCASE("trained model survives a checkpoint round trip") {
    const std::string path = temp_path("ssr-trained");
    ssr::save_checkpoint(path, res.model.params());
    auto loaded = ssr::load_ssr(path, cfg);
    const ssr::MatF Z = cache.vectors.middleRows(0, 4);
    CHECK(bitwise_equal(ssr::predict_vectors(res.model, Z),
                        ssr::predict_vectors(loaded, Z)));
    std::filesystem::remove(path);
  }

  SUBCASE("zero steps still yields a usable model") {
    auto cold = ssr::train_ssr(cache, cfg, ssr::SSRLoss::kCosine, 0, 7);
    CHECK(cold.epoch_mean_loss.empty());
    CHECK(ssr::predict_vectors(cold.model,
                               ssr::MatF(cache.vectors.middleRows(0, 4)))
              .rows() == 4);
  }
}

TEST_CASE("ssr_model: NonAR contrastive training recovers masked slots") {
  const ssr::VectorCache cache = toy_cache(4, 4, 16, 3);
  ssr::SSRConfig cfg = tiny_ssr_cfg(16, ssr::SSRMode::kNonAR);
  cfg.mask_rate = 0.3;
  cfg.n_negatives = 4;

  auto res = ssr::train_ssr(cache, cfg, ssr::SSRLoss::kContrastive, 4000, 9);
  CHECK(res.epoch_mean_loss.front() > res.epoch_mean_loss.back());
  CHECK(res.epoch_mean_loss.back() < 1.2);  // floor is 1 at perfect recovery
  CHECK(res.epoch_mean_loss.back() >= 0.0);

  double worst = 1.0;
  for (int p = 0; p < 4; ++p) {
    const ssr::MatF Z = cache.vectors.middleRows(4 * p, 4);
    for (int i = 0; i < 4; ++i)
      worst = std::min(worst, cosine(ssr::predict_masked_vector(res.model, Z, i),
                                     ssr::MatF(Z.row(i))));
  }
  CHECK(worst > 0.8);
}

TEST_CASE("ssr_model: training input contracts") {
  const ssr::VectorCache cache = toy_cache(4, 4, 16, 3);
  ssr::SSRConfig cfg = tiny_ssr_cfg();

  ssr::SSRConfig wrong = cfg;
  wrong.tf.d_model = 8;
  wrong.tf.n_heads = 2;
  CHECK_THROWS_AS(ssr::train_ssr(cache, wrong, ssr::SSRLoss::kCosine, 10, 1),
                  ssr::ConfigError);

  CHECK_THROWS_AS(ssr::train_ssr(cache, cfg, ssr::SSRLoss::kCosine, -1, 1),
                  ssr::ContractError);

  // AR cannot use single-sentence paragraphs
  const ssr::VectorCache singles = toy_cache(5, 1, 16, 5);
  CHECK_THROWS_AS(ssr::train_ssr(singles, cfg, ssr::SSRLoss::kCosine, 10, 1),
                  ssr::CorpusError);
  // ...but NonAR can
  ssr::SSRConfig nonar = tiny_ssr_cfg(16, ssr::SSRMode::kNonAR);
  CHECK_NOTHROW(ssr::train_ssr(singles, nonar, ssr::SSRLoss::kCosine, 4, 1));

  // paragraph longer than the positional table
  const ssr::VectorCache longp = toy_cache(2, 9, 16, 7);
  CHECK_THROWS_AS(ssr::train_ssr(longp, cfg, ssr::SSRLoss::kCosine, 10, 1),
                  ssr::RangeError);

  // contrastive negatives must come from other paragraphs
  const ssr::VectorCache lone = toy_cache(1, 4, 16, 9);
  CHECK_THROWS_AS(ssr::train_ssr(lone, cfg, ssr::SSRLoss::kContrastive, 10, 1),
                  ssr::CorpusError);

  ssr::VectorCache scrambled = cache;
  scrambled.paragraph_ids[6] = 0;  // duplicate run for paragraph 0
  CHECK_THROWS_AS(ssr::train_ssr(scrambled, cfg, ssr::SSRLoss::kCosine, 10, 1),
                  ssr::Error);
}
