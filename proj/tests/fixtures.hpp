#pragma once

#include <fstream>
#include <sstream>
#include <string>

#include "nopvis/smali.hpp"

namespace fixtures {

inline std::string read(const std::string& name) {
  std::ifstream in(std::string(NOPVIS_TEST_DATA) + "/" + name);
  if (!in) throw std::runtime_error("missing fixture " + name);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

inline nopvis::SmaliClass load(const std::string& name) {
  return nopvis::parse_class(read(name));
}

inline const char* kFixtures[] = {
    "demo_print.smali",  "arith_original.smali",  "arith_nop.smali",
    "arith_loop.smali",  "arith_condition.smali", "arith_sio_manual.smali",
    "arith_imi.smali",
};

}  // namespace fixtures
