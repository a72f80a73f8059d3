// Licensed under the Apache License, Version 2.0 (the "License"); you
// may not use this file except in compliance with the License.  You
// may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or
// implied.  See the License for the specific language governing
// permissions and limitations under the License.

#pragma once

#include <stdexcept>
#include <string>

namespace saeflow {

// Base for every error the library raises.
class Error : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

// Malformed or inconsistent file contents.
class FormatError : public Error
{
public:
    using Error::Error;
};

// Operand shapes do not fit together.
class ShapeError : public Error
{
public:
    using Error::Error;
};

// Violated configuration or argument precondition.
class ConfigError : public Error
{
public:
    using Error::Error;
};

// NaN or infinity showed up where training needs finite numbers.
class NumericalError : public Error
{
public:
    using Error::Error;
};

// Filesystem failure while reading or writing an artifact.
class IoError : public Error
{
public:
    using Error::Error;
};

} // namespace saeflow
