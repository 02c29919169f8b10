#pragma once

// Estimated peak lists exchanged between the sparse-recovery and fitting
// stages.  Centers are kept sorted ascending; widths_mhz[i] belongs to
// centers_mhz[i].

#include <cstddef>
#include <stdexcept>
#include <vector>

namespace csesr {

struct PeakList {
  std::vector<double> centers_mhz;  // sorted ascending
  std::vector<double> widths_mhz;   // same length as centers_mhz

  int found_count() const { return static_cast<int>(centers_mhz.size()); }

  void validate() const {
    if (widths_mhz.size() != centers_mhz.size()) {
      throw std::invalid_argument("PeakList: centers/widths length mismatch");
    }
    for (std::size_t i = 0; i + 1 < centers_mhz.size(); ++i) {
      if (!(centers_mhz[i] <= centers_mhz[i + 1])) {
        throw std::invalid_argument("PeakList: centers must be sorted");
      }
    }
  }
};

}  // namespace csesr
