#!/usr/bin/env python
#
# file: app/backend/nedc_mavqa_errors.py
#
# revision history:
#
# 20241019 (MV): initial version
#
# This file contains the exceptions raised by the MAVQA modules. Every
# exception derives from VqaError so callers can trap the whole family.
#------------------------------------------------------------------------------

class VqaError(Exception):
    """
    Class: VqaError

    description:
     base class of all MAVQA errors. pipeline errors carry the partial
     trace of the run that failed in the "trace" attribute.
    """

    def __init__(self, message, *, trace=None):
        super().__init__(message)
        self.trace = trace
#
# end of class

class InvalidInputError(VqaError, ValueError):
    """an argument violates an operation's precondition"""

class ConfigError(VqaError):
    """a run configuration or manifest is unusable"""

class AgentUnavailableError(VqaError):
    """a remote agent could not be reached after the allowed retries"""

class CassetteMissError(VqaError):
    """
    Class: CassetteMissError

    description:
     a replayed request has no recorded response.
    """

    def __init__(self, fingerprint, *, trace=None):
        super().__init__("no recorded response (%s)" % fingerprint,
                         trace=trace)
        self.fingerprint = fingerprint
#
# end of class

class ProtocolViolationError(VqaError):
    """
    Class: ProtocolViolationError

    description:
     a model reply does not follow the required format.
    """

    def __init__(self, message, raw_reply, *, trace=None):
        super().__init__("%s (%r)" % (message, raw_reply), trace=trace)
        self.raw_reply = raw_reply
#
# end of class

class BudgetExceededError(VqaError):
    """a question ran past its wall-clock budget"""

class UnsalvageableBoxError(VqaError):
    """a detector box lies entirely outside the image"""

class ImageFormatError(VqaError):
    """image bytes could not be decoded"""

class DatasetLoadError(VqaError):
    """a dataset file or one of its records is unusable"""

#
# end of file
