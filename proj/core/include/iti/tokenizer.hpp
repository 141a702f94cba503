#pragma once

#include "iti/common.hpp"

#include <string>
#include <string_view>
#include <vector>

namespace iti {

class Tokenizer {
public:
    virtual ~Tokenizer() = default;

    virtual std::vector<Token> encode(std::string_view text) const = 0;
    virtual std::string decode(std::span<const Token> tokens) const = 0;
    virtual int vocab_size() const = 0;
};

// One token per UTF-8 byte, plus BOS/EOS specials at 256/257. encode() never
// emits specials so models with vocab_size >= 256 can consume its output.
class ByteTokenizer final : public Tokenizer {
public:
    static constexpr Token bos = 256;
    static constexpr Token eos = 257;

    std::vector<Token> encode(std::string_view text) const override;
    std::string decode(std::span<const Token> tokens) const override;
    int vocab_size() const override { return 258; }
};

} // namespace iti
