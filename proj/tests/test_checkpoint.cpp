#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "bhygnn/checkpoint.hpp"
#include "bhygnn/rng.hpp"

using namespace bhygnn;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) {
  auto p = fs::temp_directory_path() / ("bhygnn_ckpt_" + name + ".bhg");
  fs::remove(p);
  return p;
}

void build_params(ParamStore& store, std::uint64_t seed) {
  RngStream rng(seed);
  Parameter* a = store.create("enc/w1", 7, 3);
  Parameter* b = store.create("enc/b1", 1, 3);
  Parameter* c = store.create("cls/w", 3, 5);
  for (auto* p : {a, b, c})
    for (std::int64_t i = 0; i < p->value.size(); ++i) p->value[i] = rng.normal();
}

}  // namespace

TEST_CASE("checkpoint round trip restores every bit") {
  auto path = temp_file("roundtrip");
  ParamStore a;
  build_params(a, 1);
  save_checkpoint(a, path.string());

  ParamStore b;
  build_params(b, 2);  // different values, same shapes
  load_checkpoint(b, path.string());
  for (std::size_t i = 0; i < a.all().size(); ++i)
    REQUIRE(a.all()[i]->value == b.all()[i]->value);
}

TEST_CASE("corrupted magic is rejected") {
  auto path = temp_file("magic");
  ParamStore a;
  build_params(a, 3);
  save_checkpoint(a, path.string());
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(0);
    f.write("XXXX", 4);
  }
  ParamStore b;
  build_params(b, 3);
  REQUIRE_THROWS_WITH(load_checkpoint(b, path.string()),
                      Catch::Matchers::ContainsSubstring("magic"));
}

TEST_CASE("truncated payload is rejected") {
  auto path = temp_file("trunc");
  ParamStore a;
  build_params(a, 4);
  save_checkpoint(a, path.string());
  const auto full = fs::file_size(path);
  fs::resize_file(path, full - 16);
  ParamStore b;
  build_params(b, 4);
  REQUIRE_THROWS_WITH(load_checkpoint(b, path.string()),
                      Catch::Matchers::ContainsSubstring("truncated"));
}

TEST_CASE("missing parameter record names the parameter") {
  auto path = temp_file("missing");
  ParamStore partial;
  RngStream rng(5);
  partial.create("enc/w1", 7, 3);
  partial.create("enc/b1", 1, 3);  // no cls/w
  save_checkpoint(partial, path.string());

  ParamStore full;
  build_params(full, 5);
  REQUIRE_THROWS_WITH(load_checkpoint(full, path.string()),
                      Catch::Matchers::ContainsSubstring("cls/w"));
}

TEST_CASE("unknown record and shape mismatch are rejected") {
  auto path = temp_file("unknown");
  ParamStore a;
  build_params(a, 6);
  save_checkpoint(a, path.string());

  SECTION("unknown") {
    ParamStore b;
    b.create("enc/w1", 7, 3);
    b.create("enc/b1", 1, 3);
    b.create("other", 3, 5);
    REQUIRE_THROWS_WITH(load_checkpoint(b, path.string()),
                        Catch::Matchers::ContainsSubstring("cls/w"));
  }
  SECTION("shape mismatch") {
    ParamStore b;
    b.create("enc/w1", 7, 3);
    b.create("enc/b1", 1, 3);
    b.create("cls/w", 5, 3);
    REQUIRE_THROWS_WITH(load_checkpoint(b, path.string()),
                        Catch::Matchers::ContainsSubstring("shape"));
  }
}
