#ifndef RGELAN_CONFIG_HPP
#define RGELAN_CONFIG_HPP

#include <string>
#include <variant>
#include <vector>

namespace rgelan {

// A module argument is either an integer or a bare keyword ("rcs", "id").
using LayerArg = std::variant<int, std::string>;

struct LayerSpec {
    std::vector<int> from; // as written: negative = relative to this layer
    int repeats = 1;
    std::string module;
    std::vector<LayerArg> args;
    int line = 0; // 1-based source line, for diagnostics
};

struct ModelConfig {
    int ch = 1;
    int nc = 1;
    std::vector<LayerSpec> layers;
};

// Text format:
//   # comment to end of line
//   ch: <int>
//   nc: <int>
//   layers:
//     - [from, repeats, Module, [arg, ...]]
// where from is an int or a bracketed int list. Errors carry 1-based line
// numbers.
ModelConfig parse_config(const std::string& text);
ModelConfig load_config(const std::string& path);

bool known_module(const std::string& name);
const std::vector<std::string>& module_registry();

} // namespace rgelan

#endif
