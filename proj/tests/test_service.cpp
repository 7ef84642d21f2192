#include <gtest/gtest.h>

#include <atomic>
#include <random>
#include <fstream>
#include <thread>

#include "refocus/service.hpp"
#include "support.hpp"

using namespace refocus;
using namespace std::chrono_literals;
using refocus::fixtures::TempDir;
using nlohmann::json;

namespace {

std::string as_string(const Bytes& b) { return std::string(b.begin(), b.end()); }

Bytes as_bytes(const std::string& s) { return Bytes(s.begin(), s.end()); }

// Service mounted on a loopback port, served from a background thread.
class Harness {
public:
  explicit Harness(service::Options opts) : svc_(std::move(opts)) {
    svc_.mount(srv_);
    port_ = srv_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { srv_.listen_after_bind(); });
    srv_.wait_until_ready();
  }
  ~Harness() {
    srv_.stop();
    thread_.join();
  }
  httplib::Client client() const {
    httplib::Client c("127.0.0.1", port_);
    c.set_read_timeout(120, 0);
    c.set_write_timeout(120, 0);
    return c;
  }
  service::Service& svc() { return svc_; }

private:
  service::Service svc_;
  httplib::Server srv_;
  int port_ = 0;
  std::thread thread_;
};

struct Assets {
  Image aif;
  Bytes image_png, depth_pfm;
};

Assets scene(int w, int h) {
  Assets a;
  a.aif = fixtures::textured_scene(w, h);
  a.image_png = encode_image_png16(a.aif);
  a.depth_pfm = encode_depth_pfm(fixtures::two_plane_depth(w, h));
  return a;
}

httplib::Result upload(httplib::Client& c, const Bytes& image, const Bytes& depth,
                       std::optional<std::string> sidecar = std::nullopt) {
  httplib::MultipartFormDataItems items{{"image", as_string(image), "image.png", "image/png"},
                                        {"depth", as_string(depth), "depth.bin", "application/octet-stream"}};
  if (sidecar) items.push_back({"depth_sidecar", *sidecar, "depth.json", "application/json"});
  return c.Post("/api/upload", items);
}

std::string upload_ok(httplib::Client& c, const Assets& a) {
  auto res = upload(c, a.image_png, a.depth_pfm);
  EXPECT_TRUE(res);
  EXPECT_EQ(res->status, 200) << res->body;
  return json::parse(res->body)["session_id"].get<std::string>();
}

httplib::Result post_json(httplib::Client& c, const std::string& path, const json& body) {
  return c.Post(path, body.dump(), "application/json");
}

service::Options options_in(const TempDir& dir) {
  service::Options o;
  o.session_dir = dir / "sessions";
  return o;
}

}  // namespace

TEST(Service, HealthAndShapes) {
  TempDir dir;
  Harness h(options_in(dir));
  auto c = h.client();
  auto health = c.Get("/healthz");
  ASSERT_TRUE(health);
  EXPECT_EQ(health->status, 200);
  EXPECT_EQ(json::parse(health->body)["status"], "ok");

  auto shapes = c.Get("/api/shapes");
  ASSERT_TRUE(shapes);
  ASSERT_EQ(shapes->status, 200);
  const auto list = json::parse(shapes->body)["shapes"];
  ASSERT_EQ(list.size(), 4u);
  std::vector<std::string> names;
  for (const auto& s : list) {
    names.push_back(s["name"]);
    const auto png = base64::decode(s["thumbnail_png"].get<std::string>());
    ASSERT_TRUE(png);
    const GrayMap thumb = decode_gray(*png);
    EXPECT_EQ(thumb.width(), thumb.height());
    EXPECT_GT(thumb.width(), 16);
  }
  EXPECT_EQ(names, (std::vector<std::string>{"circle", "triangle", "heart", "star"}));
  EXPECT_EQ(c.Get("/api/shapes")->body, shapes->body);
}

TEST(Service, UploadValidation) {
  TempDir dir;
  Harness h(options_in(dir));
  auto c = h.client();
  const Assets a = scene(40, 30);
  auto ok = upload(c, a.image_png, a.depth_pfm);
  ASSERT_TRUE(ok);
  ASSERT_EQ(ok->status, 200);
  const auto body = json::parse(ok->body);
  const std::string id = body["session_id"];
  EXPECT_EQ(id.size(), 32u);
  EXPECT_EQ(id.find_first_not_of("0123456789abcdef"), std::string::npos);
  EXPECT_EQ(body["width"], 40);
  EXPECT_EQ(body["height"], 30);
  const GrayMap preview = decode_gray(*base64::decode(body["disparity_preview_png"].get<std::string>()));
  EXPECT_EQ(preview.width(), 40);
  EXPECT_NEAR(preview.at(0, 0), 1.0f, 1e-6);
  EXPECT_NEAR(preview.at(39, 0), 0.0f, 1e-6);
  EXPECT_TRUE(std::filesystem::is_regular_file(dir / "sessions" / id / "image.png"));

  auto mismatch = upload(c, a.image_png, encode_depth_pfm(DepthMap(10, 10, 1.0f)));
  ASSERT_TRUE(mismatch);
  EXPECT_EQ(mismatch->status, 400);
  EXPECT_EQ(json::parse(mismatch->body)["code"], "dim_mismatch");

  auto garbage = upload(c, as_bytes("nope"), a.depth_pfm);
  ASSERT_TRUE(garbage);
  EXPECT_EQ(garbage->status, 400);

  auto missing = c.Post("/api/upload", httplib::MultipartFormDataItems{{"image", as_string(a.image_png), "i.png", "image/png"}});
  ASSERT_TRUE(missing);
  EXPECT_EQ(missing->status, 400);

  // 16-bit PNG depth needs its sidecar
  PngRaster raster{40, 30, 1, 16, {}};
  raster.samples.assign(40 * 30, 32768);
  const Bytes depth_png = encode_png(raster);
  auto no_sidecar = upload(c, a.image_png, depth_png);
  ASSERT_TRUE(no_sidecar);
  EXPECT_EQ(no_sidecar->status, 400);
  EXPECT_EQ(json::parse(no_sidecar->body)["code"], "missing_sidecar");
  auto with_sidecar = upload(c, a.image_png, depth_png, R"({"meters_per_unit": 0.0001})");
  ASSERT_TRUE(with_sidecar);
  EXPECT_EQ(with_sidecar->status, 200) << with_sidecar->body;
}

TEST(Service, OversizedUploadIsRejected) {
  TempDir dir;
  Harness h(options_in(dir));
  auto c = h.client();
  const std::string big(100ull * 1024 * 1024, 'x');
  auto res = c.Post("/api/upload", httplib::MultipartFormDataItems{{"image", big, "i.png", "image/png"}});
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 413);
}

TEST(Service, RenderZeroKReturnsUpload) {
  TempDir dir;
  Harness h(options_in(dir));
  auto c = h.client();
  const Assets a = scene(48, 36);
  const std::string id = upload_ok(c, a);
  auto res = post_json(c, "/api/render", {{"session_id", id}, {"k", 0}, {"focus", {{"disparity", 0.5}}}});
  ASSERT_TRUE(res);
  ASSERT_EQ(res->status, 200) << res->body;
  EXPECT_EQ(res->get_header_value("Content-Type"), "image/png");
  const Image out = decode_image(as_bytes(res->body));
  const Image in = decode_image(a.image_png);
  ASSERT_EQ(out.width(), in.width());
  for (std::size_t i = 0; i < in.data().size(); ++i) {
    ASSERT_LE(std::abs(srgb_encode(out.data()[i]) - srgb_encode(in.data()[i])), 1.0 / 65535 + 1e-12);
  }
}

TEST(Service, RenderIsDeterministicAndMatchesLibrary) {
  TempDir dir;
  Harness h(options_in(dir));
  auto c = h.client();
  const Assets a = scene(64, 48);
  const std::string id = upload_ok(c, a);
  const json req{{"session_id", id}, {"k", 7.5}, {"focus", {{"disparity", 0.0}}}, {"shape", "star"}};
  auto r1 = post_json(c, "/api/render", req);
  auto r2 = post_json(c, "/api/render", req);
  ASSERT_TRUE(r1 && r2);
  ASSERT_EQ(r1->status, 200);
  EXPECT_EQ(r1->body, r2->body);
  const Image aif = decode_image(a.image_png);
  const DisparityMap d = disparity_from_depth(decode_depth(a.depth_pfm, std::nullopt));
  const Image expected = render_tiled(aif, defocus_map(d, {0.0, 7.5}), d, *builtin_shape("star"), {});
  EXPECT_EQ(as_bytes(r1->body), encode_image_png16(expected));

  // inline polygon shapes are accepted
  auto poly = post_json(c, "/api/render", {{"session_id", id}, {"k", 4}, {"focus", {{"disparity", 0.0}}},
                                           {"shape", {{"vertices", {{0, 1}, {1, -1}, {-1, -1}}}}}});
  ASSERT_TRUE(poly);
  EXPECT_EQ(poly->status, 200);
}

TEST(Service, ClickSetsFocusPlane) {
  TempDir dir;
  Harness h(options_in(dir));
  auto c = h.client();
  const std::string id = upload_ok(c, scene(40, 30));
  auto near = post_json(c, "/api/render", {{"session_id", id}, {"k", 3}, {"focus", {{"x", 5.7}, {"y", 10.2}}}});
  auto far = post_json(c, "/api/render", {{"session_id", id}, {"k", 3}, {"focus", {{"x", 35}, {"y", 10}}}});
  ASSERT_TRUE(near && far);
  ASSERT_EQ(near->status, 200);
  EXPECT_EQ(std::stod(near->get_header_value("X-Focus-Disparity")), 1.0);
  EXPECT_EQ(std::stod(far->get_header_value("X-Focus-Disparity")), 0.0);
  const auto s = h.svc().find_session(id);
  ASSERT_TRUE(s);
  ASSERT_TRUE(s->last_render_params);
  EXPECT_EQ(s->last_render_params->focus_disparity, 0.0);
  EXPECT_EQ(s->last_render_params->k, 3.0);
}

TEST(Service, RenderErrors) {
  TempDir dir;
  Harness h(options_in(dir));
  auto c = h.client();
  const std::string id = upload_ok(c, scene(40, 30));
  auto status = [&](const json& body) { return post_json(c, "/api/render", body)->status; };
  EXPECT_EQ(status({{"session_id", std::string(32, 'a')}, {"k", 1}, {"focus", {{"disparity", 0}}}}), 404);
  EXPECT_EQ(status({{"session_id", "../etc"}, {"k", 1}, {"focus", {{"disparity", 0}}}}), 404);
  EXPECT_EQ(status({{"session_id", id}, {"k", -1}, {"focus", {{"disparity", 0}}}}), 422);
  EXPECT_EQ(status({{"session_id", id}, {"k", 1}}), 422);
  EXPECT_EQ(status({{"session_id", id}, {"k", 1}, {"focus", {{"disparity", 2}}}}), 422);
  EXPECT_EQ(status({{"session_id", id}, {"k", 1}, {"focus", {{"x", 400}, {"y", 1}}}}), 422);
  EXPECT_EQ(status({{"session_id", id}, {"k", 1}, {"focus", {{"disparity", 0}}}, {"shape", "blob"}}), 422);
  EXPECT_EQ(status({{"k", 1}}), 422);
  auto bad = c.Post("/api/render", "{not json", "application/json");
  ASSERT_TRUE(bad);
  EXPECT_EQ(bad->status, 422);
  EXPECT_EQ(json::parse(bad->body)["code"], "invalid");
}

TEST(Service, PreviewDownscalesLargeImages) {
  TempDir dir;
  Harness h(options_in(dir));
  auto c = h.client();
  const std::string id = upload_ok(c, scene(1000, 400));
  auto preview = post_json(c, "/api/render", {{"session_id", id}, {"k", 2}, {"focus", {{"disparity", 0}}}});
  ASSERT_TRUE(preview);
  ASSERT_EQ(preview->status, 200);
  const Image small = decode_image(as_bytes(preview->body));
  EXPECT_EQ(small.width(), service::preview_max_side);
  auto full = post_json(c, "/api/render",
                        {{"session_id", id}, {"k", 2}, {"focus", {{"disparity", 0}}}, {"preview", false}});
  ASSERT_TRUE(full);
  EXPECT_EQ(decode_image(as_bytes(full->body)).width(), 1000);
}

TEST(Service, CalibrateRoundTrip) {
  TempDir dir;
  Harness h(options_in(dir));
  auto c = h.client();
  const Assets a = scene(160, 120);
  const std::string id = upload_ok(c, a);
  const DisparityMap d = disparity_from_depth(decode_depth(a.depth_pfm, std::nullopt));
  const Image aif = decode_image(a.image_png);
  const Image target = render_tiled(aif, defocus_map(d, {1.0, 14.0}), d, ApertureShape::circle(), {});
  GrayMap mask(160, 120);
  for (int y = 0; y < 120; ++y) {
    for (int x = 0; x < 80; ++x) mask.at(x, y) = 1.0f;
  }
  const json req{{"session_id", id},
                 {"target", base64::encode(encode_image_png16(target))},
                 {"mask", base64::encode(encode_gray_png8(mask))},
                 {"bounds", {{"k_min", 0}, {"k_max", 64}}}};
  auto res = post_json(c, "/api/calibrate", req);
  ASSERT_TRUE(res);
  ASSERT_EQ(res->status, 200) << res->body;
  const auto body = json::parse(res->body);
  EXPECT_LE(std::abs(body["k_star"].get<double>() - 14.0) / 14.0, 0.05);
  EXPECT_GE(body["ssim"].get<double>(), 0.98);
  EXPECT_EQ(body["focus_disparity"].get<double>(), 1.0);
  EXPECT_EQ(body["trace"].size(), body["iterations"].get<std::size_t>());

  json small = req;
  small["target"] = base64::encode(encode_image_png16(Image(20, 20)));
  auto mismatch = post_json(c, "/api/calibrate", small);
  ASSERT_TRUE(mismatch);
  EXPECT_EQ(mismatch->status, 422);
  EXPECT_EQ(json::parse(mismatch->body)["code"], "dim_mismatch");

  json inverted = req;
  inverted["bounds"] = {{"k_min", 10}, {"k_max", 2}};
  auto inv = post_json(c, "/api/calibrate", inverted);
  ASSERT_TRUE(inv);
  EXPECT_EQ(inv->status, 422);
  EXPECT_EQ(json::parse(inv->body)["code"], "invalid_bounds");

  json empty = req;
  empty["mask"] = base64::encode(encode_gray_png8(GrayMap(160, 120)));
  auto em = post_json(c, "/api/calibrate", empty);
  ASSERT_TRUE(em);
  EXPECT_EQ(em->status, 422);
  EXPECT_EQ(json::parse(em->body)["code"], "empty_mask");

  json bad64 = req;
  bad64["target"] = "!!!";
  EXPECT_EQ(post_json(c, "/api/calibrate", bad64)->status, 422);
  EXPECT_EQ(post_json(c, "/api/calibrate", {{"session_id", std::string(32, '0')}})->status, 404);
}

TEST(Service, ConcurrentCalibrationIsRefused) {
  TempDir dir;
  Harness h(options_in(dir));
  auto c = h.client();
  const Assets a = scene(40, 30);
  const std::string id = upload_ok(c, a);
  GrayMap mask(40, 30, 1.0f);
  const json req{{"session_id", id},
                 {"target", base64::encode(a.image_png)},
                 {"mask", base64::encode(encode_gray_png8(mask))},
                 {"bounds", {{"k_max", 8}}}};
  {
    auto guard = h.svc().try_begin_calibration(h.svc().find_session(id));
    ASSERT_TRUE(guard);
    EXPECT_FALSE(h.svc().try_begin_calibration(h.svc().find_session(id)));
    auto res = post_json(c, "/api/calibrate", req);
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 409);
    EXPECT_EQ(json::parse(res->body)["code"], "calibration_running");
  }
  auto res = post_json(c, "/api/calibrate", req);
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200) << res->body;
}

TEST(Service, SessionsExpireAfterIdleTtl) {
  TempDir dir;
  auto now = std::make_shared<std::atomic<std::int64_t>>(1'000'000);
  service::Options opts = options_in(dir);
  opts.ttl = 60s;
  opts.clock = [now] { return service::Clock::time_point(std::chrono::seconds(now->load())); };
  Harness h(opts);
  auto c = h.client();
  const std::string id = upload_ok(c, scene(32, 24));
  const json req{{"session_id", id}, {"k", 1}, {"focus", {{"disparity", 0}}}};
  *now += 50;
  EXPECT_EQ(post_json(c, "/api/render", req)->status, 200);
  *now += 50;  // idle time counts from the last access
  EXPECT_EQ(post_json(c, "/api/render", req)->status, 200);
  *now += 61;
  EXPECT_EQ(post_json(c, "/api/render", req)->status, 404);
  EXPECT_FALSE(std::filesystem::exists(dir / "sessions" / id));
}

TEST(Service, RestartReplaysSessionsFromDisk) {
  TempDir dir;
  const Assets a = scene(48, 40);
  const json params{{"k", 5}, {"focus", {{"x", 3}, {"y", 3}}}, {"shape", "triangle"}};
  std::string id, before;
  {
    Harness h(options_in(dir));
    auto c = h.client();
    id = upload_ok(c, a);
    json req = params;
    req["session_id"] = id;
    auto res = post_json(c, "/api/render", req);
    ASSERT_TRUE(res);
    ASSERT_EQ(res->status, 200);
    before = res->body;
  }
  Harness h(options_in(dir));
  auto c = h.client();
  json req = params;
  req["session_id"] = id;
  auto res = post_json(c, "/api/render", req);
  ASSERT_TRUE(res);
  ASSERT_EQ(res->status, 200) << res->body;
  EXPECT_EQ(res->body, before);
}

TEST(Service, StaticDirectoryIsServed) {
  TempDir dir;
  std::filesystem::create_directories(dir / "www");
  std::ofstream(dir / "www" / "index.html") << "<html>refocus</html>";
  service::Options opts = options_in(dir);
  opts.static_dir = dir / "www";
  Harness h(opts);
  auto c = h.client();
  auto res = c.Get("/");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  EXPECT_EQ(res->body, "<html>refocus</html>");
}

TEST(Base64, RoundTrip) {
  std::mt19937 rng(3);
  for (std::size_t n = 0; n < 40; ++n) {
    Bytes b(n);
    for (auto& v : b) v = static_cast<std::uint8_t>(rng());
    EXPECT_EQ(base64::decode(base64::encode(b)), b);
  }
  EXPECT_EQ(base64::encode(as_bytes("foob")), "Zm9vYg==");
  EXPECT_EQ(base64::decode("Zm9vYmFy"), as_bytes("foobar"));
  EXPECT_FALSE(base64::decode("Zm9v*"));
}
