#include "rano/common.hpp"

#include <cstdio>
#include <fstream>
#include <mutex>

namespace rano {

uint64_t hash_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error("cannot open file for hashing: " + p.string());
  uint64_t h = kFnvOffset;
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof(buf));
    h = fnv1a(buf, static_cast<size_t>(in.gcount()), h);
  }
  return h;
}

std::string to_hex(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

namespace log {

namespace {
std::mutex g_mutex;
Sink g_sink;  // empty = default stderr
}  // namespace

Sink set_sink(Sink sink) {
  std::lock_guard<std::mutex> lock(g_mutex);
  Sink prev = g_sink;
  g_sink = std::move(sink);
  return prev;
}

void emit(Level level, const std::string& msg) {
  std::lock_guard<std::mutex> lock(g_mutex);
  if (g_sink) {
    g_sink(level, msg);
    return;
  }
  const char* tag = level == Level::info ? "INFO" : level == Level::warn ? "WARN" : "ERROR";
  std::fprintf(stderr, "[%s] %s\n", tag, msg.c_str());
}

void info(const std::string& msg) { emit(Level::info, msg); }
void warn(const std::string& msg) { emit(Level::warn, msg); }
void error(const std::string& msg) { emit(Level::error, msg); }

}  // namespace log

}  // namespace rano
