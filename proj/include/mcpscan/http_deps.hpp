// Single include point for cpp-httplib so the OpenSSL feature macro is
// defined identically in every translation unit.
#pragma once

#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif
#include <httplib.h>
