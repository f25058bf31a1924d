#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "statark/pipeline.hpp"

namespace statark::cli {

// Bytes map to ids 0..255. Ids above that are specials and decode to `<|id|>`.
class ByteTokenizer {
 public:
  explicit ByteTokenizer(int64_t vocab_size);

  std::vector<int64_t> encode(std::string_view text) const;
  std::string decode(std::span<const int64_t> ids) const;

 private:
  int64_t vocab_size_;
};

// Raw bytes with control and non-ASCII bytes shown as \xNN.
std::string printable(std::string_view bytes);

// Specials right after the byte range: 256 system, 257 user, 258 assistant,
// 259 end of turn (also the stop id). Needs a vocabulary of at least 260.
pipeline::ChatTemplate default_chat_template(int64_t vocab_size);

}  // namespace statark::cli
