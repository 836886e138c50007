#include <avs/scene.hpp>

#include <gtest/gtest.h>

#include "support.hpp"

using namespace avs;

namespace {

const ClassCatalog& catalog() {
  static const ClassCatalog c = ClassCatalog::load(default_catalog_path());
  return c;
}

// Dense sampling of the rectangle boundary plus an interior test.
double brute_distance(const Rect& r, double x, double y) {
  if (x >= r.min_x && x <= r.max_x && y >= r.min_y && y <= r.max_y) return 0.0;
  double best = 1e300;
  const int n = 4000;
  for (int i = 0; i <= n; ++i) {
    const double fx = r.min_x + r.width() * i / n;
    const double fy = r.min_y + r.depth() * i / n;
    best = std::min({best, std::hypot(x - fx, y - r.min_y), std::hypot(x - fx, y - r.max_y),
                     std::hypot(x - r.min_x, y - fy), std::hypot(x - r.max_x, y - fy)});
  }
  return best;
}

}  // namespace

TEST(Catalog, LoadsDefaultCatalog) {
  EXPECT_FALSE(catalog().with_placement(Placement::floor_support).empty());
  EXPECT_FALSE(catalog().with_placement(Placement::surface).empty());
  for (const auto& c : catalog().classes()) EXPECT_TRUE(c.states.empty() || c.states.size() == 2) << c.name;
}

TEST(Catalog, RejectsThreeStates) {
  const auto j = nlohmann::json::parse(R"({"classes":[{"name":"lamp","placement":"surface","width":[10,20],"depth":[10,20],
    "height":[10,20],"states":["on","off","dim"]}]})");
  EXPECT_THROW((void)ClassCatalog::from_json(j), DomainError);
}

TEST(GenerateScene, DeterministicPerSeed) {
  const Scene a = generate_scene(42, {}, catalog());
  const Scene b = generate_scene(42, {}, catalog());
  EXPECT_EQ(nlohmann::json(a).dump(), nlohmann::json(b).dump());
  const Scene c = generate_scene(43, {}, catalog());
  EXPECT_NE(nlohmann::json(a).dump(), nlohmann::json(c).dump());
}

TEST(GenerateScene, ScenesAreValidAndRespectCounts) {
  const GenerationConfig cfg;
  for (std::uint64_t seed = 0; seed < 60; ++seed) {
    const Scene s = generate_scene(seed, cfg, catalog());
    EXPECT_TRUE(validate_scene(s, &catalog()).empty()) << seed;
    int supports = 0;
    for (const auto& o : s.objects) {
      if (o.is_supporting) {
        ++supports;
        const auto kids = s.children_of(o.instance_id).size();
        EXPECT_GE(kids, 1u);
        EXPECT_LE(kids, 2u);
      }
    }
    EXPECT_GE(supports, cfg.min_supports);
    EXPECT_LE(supports, cfg.max_supports);
    EXPECT_GE(s.room.width(), cfg.room_side.lo);
    EXPECT_LE(s.room.width(), cfg.room_side.hi);
  }
}

TEST(GenerateScene, TargetsRestOnSupportTop) {
  const Scene s = generate_scene(7, {}, catalog());
  for (const auto& [sup, tgt] : support_target_pairs(s)) {
    EXPECT_DOUBLE_EQ(s.at(tgt).base_height, s.at(sup).top_height);
    EXPECT_TRUE(s.at(sup).footprint.contains(s.at(tgt).footprint));
  }
}

TEST(GenerateScene, ImpossibleConfigThrows) {
  GenerationConfig cfg;
  cfg.room_side = {150.0, 150.0};
  cfg.max_retries = 5;
  EXPECT_THROW((void)generate_scene(1, cfg, catalog()), GenerationError);
}

TEST(SceneJson, RoundTrip) {
  const Scene s = generate_scene(9, {}, catalog());
  const Scene back = nlohmann::json(s).get<Scene>();
  EXPECT_EQ(s, back);
}

TEST(ValidateScene, FlagsOverlapAndOutOfRoom) {
  Scene s = generate_scene(3, {}, catalog());
  ObjectInstance o = s.objects.front();
  o.instance_id = s.max_instance_id() + 1;
  o.footprint = o.footprint.inflated(5);
  s.objects.push_back(o);
  EXPECT_FALSE(validate_scene(s, &catalog()).empty());

  Scene t = generate_scene(3, {}, catalog());
  t.objects.front().footprint.max_x = t.room.max_x + 10;
  EXPECT_FALSE(validate_scene(t, &catalog()).empty());
}

TEST(Collision, MatchesBruteForceOracle) {
  Rng rng(21);
  int compared = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Scene s = generate_scene(seed, {}, catalog());
    for (int i = 0; i < 200; ++i) {
      const AgentState p{rng.uniform(s.room.min_x, s.room.max_x), rng.uniform(s.room.min_y, s.room.max_y), 0};
      double nearest = std::min({p.x - s.room.min_x, s.room.max_x - p.x, p.y - s.room.min_y, s.room.max_y - p.y});
      for (const auto& o : s.objects) nearest = std::min(nearest, brute_distance(o.footprint, p.x, p.y));
      if (std::abs(nearest - kDefaultAgentRadius) < 0.5) continue;
      ++compared;
      ASSERT_EQ(collision_free(s, p), nearest > kDefaultAgentRadius) << seed << " " << p.x << "," << p.y;
    }
  }
  EXPECT_GT(compared, 1500);
}

TEST(Collision, PathThroughObjectIsBlocked) {
  Scene s;
  s.room = {0, 0, 500, 500};
  ObjectInstance box;
  box.instance_id = 1;
  box.class_name = "table";
  box.footprint = {200, 200, 300, 300};
  box.top_height = 70;
  box.is_supporting = true;
  s.objects.push_back(box);
  EXPECT_FALSE(path_collision_free(s, {100, 250, 90}, {400, 250, 90}));
  EXPECT_TRUE(path_collision_free(s, {100, 100, 90}, {400, 100, 90}));
  EXPECT_FALSE(path_collision_free(s, {100, 185, 90}, {400, 185, 90}));  // disc grazes the edge
  EXPECT_FALSE(collision_free(s, {10, 250, 0}));                        // wall
}

TEST(ModifyScene, CountingPlacesCopies) {
  int modified = 0;
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const Scene s = generate_scene(seed, {}, catalog());
    const auto pair = support_target_pairs(s).front();
    try {
      const ModifiedScene m = modify_for_question_type(s, pair, QuestionType::counting, seed, catalog());
      ++modified;
      EXPECT_GE(m.count, 2);
      EXPECT_LE(m.count, 5);
      EXPECT_EQ(static_cast<int>(m.target_ids.size()), m.count);
      int same_class = 0;
      for (const auto* c : m.scene.children_of(pair.first))
        if (c->class_name == s.at(pair.second).class_name) ++same_class;
      EXPECT_EQ(same_class, m.count);
      EXPECT_TRUE(validate_scene(m.scene, &catalog()).empty());
    } catch (const SampleSkip&) {
    }
  }
  EXPECT_GT(modified, 10);
}

TEST(ModifyScene, StateAssignsDeclaredState) {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const Scene s = generate_scene(seed, {}, catalog());
    for (const auto& pair : support_target_pairs(s)) {
      const ClassSpec& spec = catalog().at(s.at(pair.second).class_name);
      if (!spec.has_states()) {
        EXPECT_THROW((void)modify_for_question_type(s, pair, QuestionType::state, seed, catalog()), DomainError);
        continue;
      }
      const ModifiedScene m = modify_for_question_type(s, pair, QuestionType::state, seed, catalog());
      const auto& st = m.scene.at(pair.second).state;
      ASSERT_TRUE(st.has_value());
      EXPECT_TRUE(*st == spec.states[0] || *st == spec.states[1]);
    }
  }
}

TEST(ModifyScene, ExistenceIsIdentity) {
  const Scene s = generate_scene(2, {}, catalog());
  const auto m = modify_for_question_type(s, support_target_pairs(s).front(), QuestionType::existence, 1, catalog());
  EXPECT_EQ(m.scene, s);
}
