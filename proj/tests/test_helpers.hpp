#pragma once

#include <gtest/gtest.h>

#include "robustdesign/errors.hpp"

#define EXPECT_ERROR_KIND(statement, expected_kind)                                   \
  do {                                                                                \
    try {                                                                             \
      (void)(statement);                                                              \
      ADD_FAILURE() << "expected " << ::robustdesign::to_string(expected_kind)        \
                    << " but nothing was thrown";                                     \
    } catch (const ::robustdesign::Error& e) {                                        \
      EXPECT_EQ(e.kind(), expected_kind) << e.what();                                 \
    }                                                                                 \
  } while (false)
