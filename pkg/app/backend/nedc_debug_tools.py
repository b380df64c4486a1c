#!/usr/bin/env python
#
# file: app/backend/nedc_debug_tools.py
#
# revision history:
#
# 20241019 (MV): routed messages through loguru, added configure()
# 20230622 (AB): refactored code to new comment format
# 20200531 (JP): refactored code
# 20200514 (JP): initial version
#
# This file contains classes that control debugging and information display.
# The level objects (Dbgl and Vrbl) are process-wide: every module creates
# its own instance, and all instances share one value.
#------------------------------------------------------------------------------

# import system modules
#
import sys

# import logging modules
#
from loguru import logger

#------------------------------------------------------------------------------
#
# global variables are listed here
#
#------------------------------------------------------------------------------

# define a numerically ordered list of 'levels'
#
NONE = int(0)
BRIEF = int(1)
SHORT = int(2)
MEDIUM = int(3)
DETAILED = int(4)
FULL = int(5)

# define a dictionary indexed by name and reverse it so we have it by level
#
LEVELS = {'NONE': NONE, 'BRIEF': BRIEF, 'SHORT': SHORT,
          'MEDIUM': MEDIUM, 'DETAILED': DETAILED, 'FULL': FULL}
NAMES = {val: key for key, val in LEVELS.items()}

# define the message format: this mirrors the NEDC convention of
# "file (line: n) function: message"
#
FMT_MESSAGE = "{file} (line: {line}) {function}: {level}: {message}"

# define the loguru level names used for each kind of message
#
LOG_DEBUG = "DEBUG"
LOG_INFO = "INFO"
LOG_WARNING = "WARNING"

#------------------------------------------------------------------------------
#
# classes are listed here
#
#------------------------------------------------------------------------------

class Level:
    """
    Class: Level

    arguments:
     none

    description:
     This is the common base of Dbgl and Vrbl. Each subclass keeps its
     value in a class attribute so that every instance in every module
     sees the same setting. Comparisons are done on integers; names are
     only used by the command line interface.
    """

    # define a static variable to hold the value
    #
    level_d = NONE

    def __int__(self):
        return int(type(self).level_d)

    def __eq__(self, level):
        return type(self).level_d == int(level)

    def __ne__(self, level):
        return type(self).level_d != int(level)

    def __gt__(self, level):
        return type(self).level_d > int(level)

    def __ge__(self, level):
        return type(self).level_d >= int(level)

    def __lt__(self, level):
        return type(self).level_d < int(level)

    def __le__(self, level):
        return type(self).level_d <= int(level)

    __hash__ = object.__hash__

    def set(self, level=None, name=None):
        """
        method: set

        arguments:
         level: an integer level (None)
         name: a level name such as "FULL" (None)

        return:
         the new integer level

        description:
         if neither argument is given the level is reset to NONE.
         an invalid value raises a ValueError.
        """

        # check and set the level by value
        #
        if level is not None:
            if not self.check(level):
                raise ValueError("invalid level value (%s)" % level)
            type(self).level_d = int(level)

        # check and set the level by name
        #
        elif name is not None:
            if name.upper() not in LEVELS:
                raise ValueError("invalid level name (%s)" % name)
            type(self).level_d = LEVELS[name.upper()]

        # if neither is specified, set to NONE
        #
        else:
            type(self).level_d = NONE

        # exit gracefully
        #
        return type(self).level_d

    def get(self):
        """
        method: get

        arguments:
         none

        return:
         the level name

        description:
         int() returns the integer value.
        """
        return NAMES[type(self).level_d]

    @staticmethod
    def check(level):
        return NONE <= int(level) <= FULL
#
# end of class

class Dbgl(Level):
    """
    Class: Dbgl

    description:
     the debug level. DETAILED and above turn on debug messages.
    """
    level_d = NONE
#
# end of class

class Vrbl(Level):
    """
    Class: Vrbl

    description:
     the verbosity level. BRIEF and above turn on informational messages.
    """
    level_d = NONE
#
# end of class

#------------------------------------------------------------------------------
#
# functions are listed here
#
#------------------------------------------------------------------------------

def configure(dbgl=None, vrbl=None, quiet=False, sink=None):
    """
    function: configure

    arguments:
     dbgl: a debug level name (None = leave unchanged)
     vrbl: a verbosity level name (None = leave unchanged)
     quiet: if True, suppress all log output
     sink: where to write messages (None = stderr)

    return:
     the loguru level name that was installed, or None when quiet

    description:
     this function sets the process-wide levels and replaces the loguru
     sinks with one sink whose threshold follows the levels.
    """

    # set the levels
    #
    if dbgl is not None:
        Dbgl().set(name=dbgl)
    if vrbl is not None:
        Vrbl().set(name=vrbl)

    # remove whatever sinks are installed
    #
    logger.remove()
    if quiet:
        return None

    # pick the threshold: debug messages need a detailed debug level,
    # informational messages need some verbosity
    #
    if Dbgl() >= DETAILED:
        threshold = LOG_DEBUG
    elif Vrbl() >= BRIEF:
        threshold = LOG_INFO
    else:
        threshold = LOG_WARNING

    # install the sink
    #
    logger.add(sink if sink is not None else sys.stderr,
               level=threshold, format=FMT_MESSAGE, colorize=False,
               enqueue=False)

    # exit gracefully
    #
    return threshold
#
# end of function

#
# end of file
