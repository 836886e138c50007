#include <avs/render.hpp>

#include <gtest/gtest.h>

#include "support.hpp"

using namespace avs;

namespace {

const ClassCatalog& catalog() {
  static const ClassCatalog c = ClassCatalog::load(default_catalog_path());
  return c;
}

Scene one_box_scene(Rect fp, double base, double top) {
  Scene s;
  s.scene_id = "box";
  s.room = {0, 0, 600, 600};
  ObjectInstance o;
  o.instance_id = 7;
  o.class_name = "table";
  o.footprint = fp;
  o.base_height = base;
  o.top_height = top;
  s.objects.push_back(o);
  return s;
}

CameraConfig small_cam(int w = 64, int h = 64) {
  CameraConfig c;
  c.width = w;
  c.height = h;
  return c;
}

}  // namespace

TEST(Render, MatchesNaiveOracle) {
  Rng rng(1234);
  const CameraConfig cam = small_cam();
  for (std::uint64_t seed = 100; seed < 105; ++seed) {
    const Scene s = generate_scene(seed, {}, catalog());
    const AgentState p = testkit::random_free_pose(s, rng);
    const InstanceImage a = render_instance(s, p, cam);
    const InstanceImage b = testkit::naive_render(s, p, cam);
    long diff = 0;
    for (std::size_t i = 0; i < a.ids.size(); ++i) diff += a.ids[i] != b.ids[i];
    EXPECT_EQ(diff, 0) << "seed " << seed;
  }
}

TEST(Render, EmptySceneIsBackground) {
  Scene s;
  s.room = {0, 0, 400, 400};
  const InstanceImage img = render_instance(s, {200, 200, 0}, small_cam());
  EXPECT_EQ(pixel_count(img, 0), img.pixels());
  EXPECT_TRUE(visible_instances(img).empty());
}

TEST(Render, BoxAheadIsCenteredAndBoxBehindIsHidden) {
  const Scene ahead = one_box_scene({250, 350, 350, 450}, 0, 120);
  const InstanceImage img = render_instance(ahead, {300, 200, 0}, small_cam());
  EXPECT_GT(pixel_count(img, 7), 0);
  const Centroid c = mask_centroid(img, std::vector<int>{7});
  EXPECT_NEAR(c.col, 32.0, 1e-9);  // symmetric about the optical axis

  const InstanceImage back = render_instance(ahead, {300, 500, 0}, small_cam());
  EXPECT_EQ(pixel_count(back, 7), 0);
}

TEST(Render, NearerObjectOccludes) {
  Scene s = one_box_scene({280, 300, 320, 320}, 0, 150);
  ObjectInstance far = s.objects.front();
  far.instance_id = 3;
  far.footprint = {200, 450, 400, 480};
  s.objects.push_back(far);
  const InstanceImage img = render_instance(s, {300, 200, 0}, small_cam());
  EXPECT_EQ(img.at(32, 32), 7);
}

TEST(Render, DeterministicAndCounted) {
  const Scene s = generate_scene(5, {}, catalog());
  const auto before = render_call_count();
  const InstanceImage a = render_instance(s, {s.room.center_x(), 60, 0}, small_cam());
  const InstanceImage b = render_instance(s, {s.room.center_x(), 60, 0}, small_cam());
  EXPECT_EQ(a, b);
  EXPECT_EQ(render_call_count() - before, 2u);
}

TEST(Render, RejectsBadCamera) {
  const Scene s = one_box_scene({0, 0, 1, 1}, 0, 1);
  CameraConfig c = small_cam();
  c.fov_deg = 180;
  EXPECT_THROW((void)render_instance(s, {300, 300, 0}, c), DomainError);
  EXPECT_THROW((void)render_instance(s, {300, 300, 0}, small_cam(8, 8)), DomainError);
}

TEST(Metrics, CountsAndCentroid) {
  InstanceImage img(4, 4);
  img.at(0, 0) = 2;
  img.at(0, 1) = 2;
  img.at(3, 3) = 5;
  EXPECT_EQ(pixel_count(img, 2), 2);
  EXPECT_EQ(pixel_count(img, std::vector<int>{2, 5}), 3);
  EXPECT_EQ(pixel_count(img, 9), 0);
  const auto v = visible_instances(img);
  ASSERT_EQ(v.size(), 2u);
  EXPECT_EQ(v.at(2), 2);
  EXPECT_EQ(v.at(5), 1);
  const Centroid c = mask_centroid(img, std::vector<int>{2});
  EXPECT_DOUBLE_EQ(c.col, 1.0);  // pixel centers 0.5 and 1.5
  EXPECT_DOUBLE_EQ(c.row, 0.5);
}

TEST(Metrics, CentroidDistanceNormalizedByHalfDiagonal) {
  InstanceImage img(10, 10);
  img.at(4, 4) = img.at(4, 5) = img.at(5, 4) = img.at(5, 5) = 1;
  EXPECT_NEAR(centroid_distance(img, 1), 0.0, 1e-12);
  InstanceImage corner(10, 10);
  corner.at(0, 0) = 1;
  EXPECT_NEAR(centroid_distance(corner, 1), std::hypot(4.5, 4.5) / std::hypot(5.0, 5.0), 1e-12);
  EXPECT_THROW((void)centroid_distance(corner, 3), DomainError);
}

TEST(Pgm, RoundTripAndStrictDecode) {
  InstanceImage img(3, 2);
  img.ids = {0, 1, 65535, 256, 2, 7};
  const std::string bytes = encode_pgm(img);
  EXPECT_EQ(bytes.substr(0, 13), "P5\n3 2\n65535\n");
  EXPECT_EQ(bytes.size(), 13u + 12u);
  EXPECT_EQ(decode_pgm(bytes), img);
  EXPECT_EQ(static_cast<unsigned char>(bytes[bytes.size() - 6]), 0x01);  // big-endian 256
  EXPECT_THROW((void)decode_pgm("P6\n3 2\n65535\n"), IoError);
  EXPECT_THROW((void)decode_pgm(bytes.substr(0, bytes.size() - 1)), IoError);
  EXPECT_THROW((void)decode_pgm("P5\n3 2\n255\n" + std::string(6, '\0')), IoError);
  const std::string ppm = encode_ppm_preview(img);
  EXPECT_EQ(ppm.substr(0, 11), "P6\n3 2\n255\n");
  EXPECT_EQ(ppm.size(), 11u + 18u);
}
