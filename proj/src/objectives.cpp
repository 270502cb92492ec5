#include "varda/objectives.hpp"

#include <stdexcept>

namespace varda {

const char* disc_mode_name(DiscMode m) { return m == DiscMode::sliced ? "sliced" : "full"; }

DiscMode parse_disc_mode(const std::string& s) {
  if (s == "sliced") return DiscMode::sliced;
  if (s == "full") return DiscMode::full;
  throw ConfigError("disc_mode: expected sliced or full, got '" + s + "'", 0);
}

void LossBreakdown::recompute_total(const LossWeights& w) {
  total = w.alpha1 * source_loss() + w.alpha2 * target_loss() + w.alpha3 * discrepancy;
}

std::string loss_csv_line(long iter, const LossBreakdown& b) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%ld,%.17g,%.17g,%.17g,%.17g,%.17g\n", iter, b.seg_loss, b.remainder_S(),
                b.target_loss(), b.discrepancy, b.total);
  return buf;
}

LossCsv::LossCsv(const std::string& path, const std::string& manifest_id, bool append) {
  f_ = std::fopen(path.c_str(), append ? "a" : "w");
  if (!f_) throw std::runtime_error("cannot open loss log " + path);
  if (!append) {
    std::fprintf(f_, "# manifest %s\n", manifest_id.c_str());
    std::fputs("iter,seg_loss,remainder_S,target_loss,discrepancy,total\n", f_);
  }
}

LossCsv::~LossCsv() {
  if (f_) std::fclose(f_);
}

void LossCsv::write(long iter, const LossBreakdown& b) { std::fputs(loss_csv_line(iter, b).c_str(), f_); }

void LossCsv::flush() { std::fflush(f_); }

}  // namespace varda
