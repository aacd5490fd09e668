#pragma once

#include <iostream>
#include <string>

namespace grouplab {

inline void log_warn(const std::string& msg) {
  std::cerr << "[grouplab] " << msg << "\n";
}

}  // namespace grouplab
