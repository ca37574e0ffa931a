#include <doctest.h>

#include "fixtures.hpp"
#include "ivgen/checkpoint.hpp"

#include <sstream>

using namespace ivgen;

namespace {

Checkpoint make_checkpoint(bool trained) {
  const fixture::Pipeline p;
  Checkpoint c{p.transforms, p.fpca, std::nullopt};
  if (trained) c.model = p.model;
  return c;
}

std::string bytes_of(const Checkpoint& c) {
  std::stringstream s;
  save_checkpoint(s, c);
  return s.str();
}

}  // namespace

TEST_CASE("save, load, save is byte identical") {
  for (bool trained : {false, true}) {
    const auto c = make_checkpoint(trained);
    const std::string first = bytes_of(c);
    CHECK(first.substr(0, 4) == "IVGN");
    std::stringstream in(first);
    const auto back = load_checkpoint(in);
    CHECK(back.model.has_value() == trained);
    CHECK(bytes_of(back) == first);
    CHECK(back.fpca.components == c.fpca.components);
    CHECK(back.transforms.equities == c.transforms.equities);
    if (trained) {
      CHECK(back.model->drift_net.params() == c.model->drift_net.params());
      CHECK(back.model->norm_scale == c.model->norm_scale);
      CHECK(back.model->lag == c.model->lag);
    }
  }
}

TEST_CASE("corruption and version mismatch are rejected") {
  const std::string good = bytes_of(make_checkpoint(true));
  auto reject = [](std::string bytes) {
    std::stringstream in(bytes);
    try {
      load_checkpoint(in);
    } catch (const Error& e) {
      return std::string(e.what());
    }
    return std::string("accepted");
  };
  std::string flipped = good;
  flipped[good.size() / 2] ^= 0x01;
  CHECK(reject(flipped).find("checksum") != std::string::npos);
  std::string version = good;
  version[4] = 9;
  CHECK(reject(version).find("version") != std::string::npos);
  CHECK(reject(good.substr(0, good.size() - 3)) != "accepted");
  CHECK(reject("JUNK" + good.substr(4)) != "accepted");
}

TEST_CASE("FNV-1a reference values") {
  CHECK(fnv1a("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a("a") == 0xaf63dc4c8601ec8cULL);
  CHECK(fnv1a("foobar") == 0x85944171f73967e8ULL);
}
