// Copyright (c) 2026, The mvp-tok Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "mvptok/utf8.hpp"

#include <gtest/gtest.h>

namespace mvptok::utf8 {
namespace {

TEST(Utf8Test, DecodeEncodeRoundTrip) {
  const std::string s = "我喜欢abc\xF0\x9F\x98\x80";
  EXPECT_EQ(encode(decode(s)), s);
  EXPECT_EQ(length(s), 7u);
  EXPECT_EQ(chars(s).size(), 7u);
}

TEST(Utf8Test, RejectsBadSequencesWithOffset) {
  try {
    decode("ab\xC0\xAF");  // overlong '/'
    FAIL();
  } catch (const DecodeError& e) {
    EXPECT_EQ(e.offset(), 2u);
  }
  EXPECT_FALSE(valid("\xED\xA0\x80"));  // surrogate
  EXPECT_FALSE(valid("\xE6\x88"));      // truncated
  EXPECT_TRUE(valid(""));
}

TEST(Utf8Test, Classes) {
  EXPECT_TRUE(is_cjk(U'我'));
  EXPECT_FALSE(is_cjk(U'，'));
  EXPECT_FALSE(is_cjk(U'a'));
  EXPECT_TRUE(is_space(0x3000));
  EXPECT_TRUE(all_cjk("喜欢"));
  EXPECT_FALSE(all_cjk("喜a"));
  EXPECT_FALSE(all_cjk(""));
}

TEST(Utf8Test, NormalizeIsOneToOne) {
  EXPECT_EQ(normalize("ＡＢｃ　NBA我"), "abc nba我");
  const std::string s = "Ｈｅｌｌｏ，世界！";
  EXPECT_EQ(length(normalize(s)), length(s));
}

}  // namespace
}  // namespace mvptok::utf8
