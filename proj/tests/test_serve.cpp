#include <gtest/gtest.h>

#include <future>
#include <thread>

#include "fdl/serve.hpp"
#include "support.hpp"

using namespace fdl;
namespace ft = fdl::testing;

namespace {

std::shared_ptr<const FdlModel> model_with_layers(std::size_t n) {
  auto m = std::make_shared<FdlModel>();
  for (std::size_t k = 0; k < n; ++k) {
    m->d.push_back(-2.0 + 4.0 * static_cast<double>(k) / static_cast<double>(std::max<std::size_t>(n - 1, 1)));
    m->layers.push_back(forward(ft::noise_texture(24, 16, 3, k, 1, 0.0, 1.0 / static_cast<double>(n))));
  }
  m->calibration = FactoredShifts{Eigen::Vector3d(-1.0, 0.0, 1.5), Eigen::Vector3d(-0.5, 0.25, 0.5),
                                  Eigen::Map<const Eigen::VectorXd>(m->d.data(), static_cast<Eigen::Index>(n))};
  return m;
}

std::string body_of(const Image& img) {
  const Bytes b = encode_png(img);
  return {b.begin(), b.end()};
}

}  // namespace

TEST(RenderService, RefusesMissingModel) {
  EXPECT_THROW(RenderService(nullptr), InvalidArgument);
}

TEST(RenderService, InfoReportsLayersAndHull) {
  const RenderService svc(model_with_layers(30));
  const auto j = svc.info();
  EXPECT_EQ(j["n"], 30);
  EXPECT_EQ(j["d"].size(), 30u);
  EXPECT_EQ(j["W"], 24);
  EXPECT_EQ(j["H"], 16);
  EXPECT_EQ(j["hull"]["u_min"], -1.0);
  EXPECT_EQ(j["hull"]["u_max"], 1.5);
  EXPECT_EQ(j["hull"]["v_min"], -0.5);
  EXPECT_EQ(j["hull"]["v_max"], 0.5);
  const auto names = j["apertures"].get<std::vector<std::string>>();
  EXPECT_NE(std::find(names.begin(), names.end(), "disk"), names.end());
}

TEST(RenderService, DefaultQueryIsCentralPinholeView) {
  const auto model = model_with_layers(3);
  const RenderService svc(model);
  const ServiceResponse r = svc.handle_render({});
  ASSERT_EQ(r.status, 200);
  EXPECT_EQ(r.content_type, "image/png");
  EXPECT_EQ(r.body, body_of(render(*model, RenderRequest{})));
}

TEST(RenderService, ParametersReachTheRenderer) {
  const auto model = model_with_layers(3);
  const RenderService svc(model);
  RenderRequest req;
  req.u0 = 0.5;
  req.v0 = -1.0;
  req.s = 0.25;
  req.f = 2.0;
  req.aperture = cached_builtin_aperture("square");
  const ServiceResponse r =
      svc.handle_render({{"u", "0.5"}, {"v", "-1"}, {"s", "0.25"}, {"f", "2"}, {"aperture", "square"}});
  ASSERT_EQ(r.status, 200);
  EXPECT_EQ(r.body, body_of(render(*model, req)));
}

TEST(RenderService, ValidationErrors) {
  const RenderService svc(model_with_layers(2));
  auto field = [](const ServiceResponse& r) { return nlohmann::json::parse(r.body)["field"].get<std::string>(); };
  ServiceResponse r = svc.handle_render({{"f", "-0.1"}});
  EXPECT_EQ(r.status, 400);
  EXPECT_EQ(field(r), "f");
  r = svc.handle_render({{"u", "abc"}});
  EXPECT_EQ(r.status, 400);
  EXPECT_EQ(field(r), "u");
  r = svc.handle_render({{"s", "nan"}});
  EXPECT_EQ(r.status, 400);
  EXPECT_EQ(field(r), "s");
  r = svc.handle_render({{"v", "1.5x"}});
  EXPECT_EQ(field(r), "v");
  r = svc.handle_render({{"aperture", "hexagon"}});
  EXPECT_EQ(r.status, 422);
  EXPECT_EQ(field(r), "aperture");
  r = svc.handle_render({{"quality", "gif"}});
  EXPECT_EQ(r.status, 400);
  EXPECT_EQ(field(r), "quality");
  EXPECT_EQ(svc.handle_render({{"quality", "jpeg-101"}}).status, 400);
  EXPECT_EQ(svc.metrics().errors.load(), 7u);
}

TEST(RenderService, JpegAndDeterminism) {
  const RenderService svc(model_with_layers(4));
  const std::multimap<std::string, std::string> q{{"u", "0.3"}, {"f", "1"}, {"quality", "jpeg-70"}};
  const ServiceResponse a = svc.handle_render(q), b = svc.handle_render(q);
  EXPECT_EQ(a.status, 200);
  EXPECT_EQ(a.content_type, "image/jpeg");
  EXPECT_EQ(a.body, b.body);
  EXPECT_EQ(svc.handle_render({{"quality", "jpeg"}}).content_type, "image/jpeg");
}

TEST(RenderService, CustomApertures) {
  ServiceOptions opt;
  opt.apertures["wide"] = std::make_shared<const ApertureSpec>(ApertureShape::square(3.0));
  const RenderService svc(model_with_layers(2), opt);
  EXPECT_EQ(svc.handle_render({{"aperture", "wide"}, {"f", "1"}}).status, 200);
  const auto names = svc.info()["apertures"].get<std::vector<std::string>>();
  EXPECT_NE(std::find(names.begin(), names.end(), "wide"), names.end());
}

TEST(HttpServer, EndToEnd) {
  const auto model = model_with_layers(5);
  ServiceOptions opt;
  opt.threads = 4;
  const RenderService svc(model, opt);
  httplib::Server server;
  svc.mount(server);
  const int port = server.bind_to_any_port("127.0.0.1");
  ASSERT_GT(port, 0);
  std::thread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  httplib::Client cli("127.0.0.1", port);
  auto info = cli.Get("/api/info");
  ASSERT_TRUE(info);
  EXPECT_EQ(info->status, 200);
  EXPECT_EQ(info->get_header_value("Access-Control-Allow-Origin"), "*");
  EXPECT_EQ(nlohmann::json::parse(info->body)["n"], 5);

  auto img = cli.Get("/api/render?u=0&v=0&s=0&f=0");
  ASSERT_TRUE(img);
  EXPECT_EQ(img->status, 200);
  EXPECT_EQ(img->get_header_value("Content-Type"), "image/png");
  EXPECT_EQ(img->body, body_of(render(*model, RenderRequest{})));

  auto bad = cli.Get("/api/render?f=-1");
  ASSERT_TRUE(bad);
  EXPECT_EQ(bad->status, 400);
  EXPECT_NE(bad->body.find("\"f\""), std::string::npos);
  auto unk = cli.Get("/api/render?aperture=blob");
  ASSERT_TRUE(unk);
  EXPECT_EQ(unk->status, 422);
  auto pre = cli.Options("/api/render");
  ASSERT_TRUE(pre);
  EXPECT_EQ(pre->status, 204);

  // Concurrent identical queries return identical bytes.
  std::vector<std::future<std::string>> futures;
  for (int i = 0; i < 8; ++i)
    futures.push_back(std::async(std::launch::async, [port] {
      httplib::Client c("127.0.0.1", port);
      auto r = c.Get("/api/render?u=0.7&v=-0.2&s=0.5&f=1.5&aperture=disk");
      return r && r->status == 200 ? r->body : std::string();
    }));
  const std::string first = futures[0].get();
  EXPECT_FALSE(first.empty());
  for (std::size_t i = 1; i < futures.size(); ++i) EXPECT_EQ(futures[i].get(), first);

  server.stop();
  th.join();
}
