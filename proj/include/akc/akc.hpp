#pragma once

#include "akc/diagnostics.hpp"
