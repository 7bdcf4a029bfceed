#pragma once

namespace pulsesync {

/// Sets the global log level from PULSESYNC_LOG (trace, debug, info, warn,
/// error, off). Unset or unknown values leave the default at warn. Logs go to
/// stderr so stdout stays machine-readable.
void init_logging();

} // namespace pulsesync
