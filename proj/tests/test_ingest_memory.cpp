// Peak heap use of a streaming pass must not grow with the dump size.

#include <gtest/gtest.h>

#include <atomic>
#include <cstdlib>
#include <fstream>
#include <new>

#include <malloc.h>

#include "specbench/kb_ingest.hpp"
#include "test_support.hpp"

namespace {

std::atomic<std::int64_t> g_live{0};
std::atomic<std::int64_t> g_peak{0};

void note_alloc(std::size_t n) {
  const auto now = g_live.fetch_add(static_cast<std::int64_t>(n)) + static_cast<std::int64_t>(n);
  auto peak = g_peak.load();
  while (now > peak && !g_peak.compare_exchange_weak(peak, now)) {
  }
}

}  // namespace

void* operator new(std::size_t n) {
  void* p = std::malloc(n ? n : 1);
  if (!p) throw std::bad_alloc();
  note_alloc(malloc_usable_size(p));
  return p;
}

void operator delete(void* p) noexcept {
  if (!p) return;
  g_live.fetch_sub(static_cast<std::int64_t>(malloc_usable_size(p)));
  std::free(p);
}

void operator delete(void* p, std::size_t) noexcept { operator delete(p); }

namespace {

void write_dump(const std::filesystem::path& path, int records) {
  std::ofstream out(path);
  out << "[\n";
  for (int i = 0; i < records; ++i) {
    out << R"({"type":"item","id":"Q)" << i << R"(","labels":{"en":{"language":"en","value":"Entity number )"
        << i << R"("},"fr":{"language":"fr","value":"Entite )" << i
        << R"("}},"descriptions":{"en":{"language":"en","value":"a synthetic record padded to look like a real one"}},)"
        << R"("claims":{"P131":[{"mainsnak":{"snaktype":"value","property":"P131","datavalue":{"value":)"
        << R"({"entity-type":"item","id":"Q)" << (i + 1) << R"("},"type":"wikibase-entityid"}},"rank":"normal"}]}})"
        << (i + 1 < records ? ",\n" : "\n");
  }
  out << "]\n";
}

std::int64_t peak_for(const std::filesystem::path& path) {
  specbench::StreamOptions opts;
  opts.batch_lines = 512;
  std::uint64_t claims = 0;
  g_peak.store(g_live.load());
  const auto base = g_live.load();
  specbench::stream_entities(path, opts, [&](specbench::EntityRecord&& r) {
    claims += r.claims.size();
  });
  EXPECT_GT(claims, 0u);
  return g_peak.load() - base;
}

}  // namespace

TEST(IngestMemory, PeakDoesNotScaleWithDumpSize) {
  specbench::testing::TempDir dir;
  write_dump(dir / "small.json", 5000);
  write_dump(dir / "large.json", 40000);
  const auto small = peak_for(dir / "small.json");
  const auto large = peak_for(dir / "large.json");
  const auto size_large = static_cast<std::int64_t>(std::filesystem::file_size(dir / "large.json"));
  RecordProperty("peak_small", std::to_string(small));
  RecordProperty("peak_large", std::to_string(large));
  // Eight times the input, well under twice the peak, and a small fraction of
  // the file itself.
  EXPECT_LT(large, 2 * small + (1 << 20));
  EXPECT_LT(large, size_large / 4);
}
