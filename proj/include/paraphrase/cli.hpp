#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace paraphrase {

// Exit codes: 0 success, 1 internal error, 2 usage or configuration error
// (including missing inputs and prerequisite artifacts).
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace paraphrase
