#!/usr/bin/env python
#
# file: app/backend/nedc_file_tools.py
#
# revision history:
#
# 20241019 (MV): added line-delimited record i/o, whole-file parameter
#                parsing and environment interpolation
# 20230621 (AB): refactored code to new comment style
# 20200623 (JP): reorganized
# 20170521 (JP): initial version
#
# usage:
#  import nedc_file_tools as nft
#
# This file contains a collection of functions that deal with file handling:
# parameter files, filenames and line-delimited (one json object per line)
# record files.
#------------------------------------------------------------------------------
#
# imports are listed here
#
#------------------------------------------------------------------------------

# import system modules
#
import json
import os
import re
import tempfile
import threading

# import logging modules
#
from loguru import logger

# import NEDC modules
#
import nedc_debug_tools as ndt

#------------------------------------------------------------------------------
#
# global variables are listed here
#
#------------------------------------------------------------------------------

# set the default character encoding system
#
DEF_CHAR_ENCODING = "utf-8"

# file processing character constants
#
DELIM_BOPEN = '{'
DELIM_BCLOSE = '}'
DELIM_COMMA = ','
DELIM_COMMENT = '#'
DELIM_EQUAL = '='
DELIM_NEWLINE = '\n'
DELIM_NULL = ''
DELIM_QUOTE = '"'
DELIM_SPACE = ' '
DELIM_SQUOTE = '\''

# define common reference keys
#
DEF_VERSION = "version"
DEF_SCHEMA_KEY = "v"
DEF_SCHEMA_VERSION = int(1)

# file version constants
#
PFILE_VERSION = "param_v1.0.0"

# i/o constants
#
MODE_APPEND_TEXT = "a"
MODE_READ_TEXT = "r"
MODE_READ_BINARY = "rb"
MODE_WRITE_TEXT = "w"
MODE_WRITE_BINARY = "wb"

# boolean spellings accepted in parameter files
#
BOOL_TRUE = ("true", "yes", "on", "1")
BOOL_FALSE = ("false", "no", "off", "0")

# declare a global debug object so we can use it in functions
#
dbgl = ndt.Dbgl()

# serializes appends from concurrent writers in this process
#
_append_lock = threading.Lock()

#------------------------------------------------------------------------------
#
# functions listed here: filenames
#
#------------------------------------------------------------------------------

def get_fullpath(path, root=None):
    """
    function: get_fullpath

    arguments:
     path: path to directory or file
     root: directory used to anchor relative paths (None = cwd)

    return:
     the full path to directory/file path argument

    description:
     This function returns the full pathname for a file. It expands
     environment variables and the user's home directory.
    """

    # display informational message
    #
    if dbgl == ndt.FULL:
        logger.debug("expanding name ({})", path)

    # expand the name
    #
    path = os.path.expanduser(os.path.expandvars(path))
    if root is not None and not os.path.isabs(path):
        path = os.path.join(root, path)

    # exit gracefully
    #
    return os.path.abspath(path)
#
# end of function

def make_dir(path):
    """
    function: make_dir

    arguments:
     path: new directory path

    return:
     a boolean value indicating status

    description:
     This function emulates the Unix command "mkdir -p".
    """

    # an empty name means the current directory
    #
    if not path:
        return True

    os.makedirs(path, exist_ok=True)

    # exit gracefully
    #
    return True
#
# end of function

def get_version(fname):
    """
    function: get_version

    arguments:
     fname: input filename

    return:
     a string containing the version, or None

    description:
     this function opens a file, reads the magic sequence and returns
     the string. both "version = x" and "# version = x" are accepted.
    """

    # display informational message
    #
    if dbgl > ndt.BRIEF:
        logger.debug("opening file ({})", fname)

    # open the file
    #
    try:
        fp = open(fname, MODE_READ_TEXT, encoding=DEF_CHAR_ENCODING)
    except OSError:
        logger.error("file not found ({})", fname)
        return None

    # iterate over lines until we find the magic string
    #
    ver = None
    with fp:
        for line in fp:
            line = line.strip().lower()
            if line.startswith(DEF_VERSION) or \
               line.startswith(DELIM_COMMENT + DELIM_SPACE + DEF_VERSION):

                # only get version value after "version"
                #  for example, xxx_v1.0.0
                #
                ver = line.split(DEF_VERSION, 1)[-1]
                ver = ver.replace(DELIM_EQUAL, DELIM_NULL).strip()
                ver = ver.split()[0] if ver else None
                if ver is not None:
                    ver = ver.replace(DELIM_QUOTE, DELIM_NULL)
                break

    # exit gracefully
    #
    return ver
#
# end of function

#------------------------------------------------------------------------------
#
# functions listed here: manage parameter files
#
#------------------------------------------------------------------------------

def interpolate(value):
    """
    function: interpolate

    arguments:
     value: a string or a list of strings

    return:
     the value with $VAR and ${VAR} replaced from the environment

    description:
     unknown variables are left as written.
    """
    if isinstance(value, list):
        return [os.path.expandvars(v) for v in value]
    return os.path.expandvars(value)
#
# end of function

def get_kv_pair(input_str):
    """
    function: get_kv_pair

    arguments:
     input_str: the input string to turn into a key:value pair

    return:
     key: the key of the determined key:value pair
     value: the value of the determined key:value pair

    description:
     This function parses a parameter string (key = value) and turns it into a
     key:value pair value. This function supports key:single-value pairs and
     key:list pairs. A quoted value is taken literally.
    """

    # split the current key into key and value parts
    #
    key, _, raw = input_str.partition(DELIM_EQUAL)
    key = key.strip()
    raw = raw.strip()

    # if the value is surrounded by quotes, determine it as a literal and
    # remove the surrounding quotes
    #
    if len(raw) >= 2 and raw[0] == raw[-1] and raw[0] in (DELIM_QUOTE,
                                                          DELIM_SQUOTE):
        return key, raw[1:-1]

    # split the value using regex. this expression will split the value
    # string into lists if there are commas present. if the commas are
    # inside of parenthesis they will not be counted
    #
    parts = re.split(r',\s*(?![^()]*\))', raw)

    # one string is a single value, more than one is a list
    #
    if len(parts) <= 1:
        value = parts[0].strip()
    else:
        value = [part.strip() for part in parts]

    # exit gracefully
    #
    return key, value
#
# end of function

def load_parameter_file(pfile):
    """
    function: load_parameter_file

    arguments:
     pfile: path of a parameter file

    return:
     a dict mapping block names to dicts of values. top-level assignments
     (outside any block) are stored under the empty name "".

    raises:
     OSError if the file cannot be read, ValueError if it is not a
     parameter file or a block is malformed

    description:
     This function reads every block of a parameter file in one pass:

      version = param_v1.0.0
      PIPELINE {
       use_counter = true
      }

     Values are interpolated from the environment.
    """

    # display informational message
    #
    if dbgl == ndt.FULL:
        logger.debug("loading ({})", pfile)

    # make sure the file is a parameter file
    #
    if get_version(pfile) != PFILE_VERSION:
        raise ValueError("invalid parameter file version (%s)" % pfile)

    # loop over all lines in the file
    #
    blocks = {DELIM_NULL: {}}
    current = None
    with open(pfile, MODE_READ_TEXT, encoding=DEF_CHAR_ENCODING) as fp:
        for lnum, line in enumerate(fp, start=1):
            sline = line.strip()

            # throw away commented and blank lines
            #
            if not sline or sline.startswith(DELIM_COMMENT):
                continue

            # a block opens with "NAME {"
            #
            if sline.endswith(DELIM_BOPEN) and DELIM_EQUAL not in sline:
                if current is not None:
                    raise ValueError("nested block at line %d (%s)" %
                                     (lnum, pfile))
                current = sline[:-1].strip()
                blocks.setdefault(current, {})

            # a block closes with "}"
            #
            elif sline == DELIM_BCLOSE:
                if current is None:
                    raise ValueError("unbalanced '}' at line %d (%s)" %
                                     (lnum, pfile))
                current = None

            # everything else is an assignment
            #
            elif DELIM_EQUAL in sline:
                key, value = get_kv_pair(sline)
                blocks[current if current is not None
                       else DELIM_NULL][key] = interpolate(value)

            else:
                raise ValueError("unparseable line %d (%s)" % (lnum, pfile))

    # make sure every block was closed
    #
    if current is not None:
        raise ValueError("unterminated block (%s) in (%s)" % (current, pfile))

    # exit gracefully
    #
    return blocks
#
# end of function

def to_bool(value):
    """
    function: to_bool

    arguments:
     value: a string from a parameter file (or a bool)

    return:
     a boolean

    description:
     raises ValueError on anything that is not a recognized spelling.
    """
    if isinstance(value, bool):
        return value
    sval = str(value).strip().lower()
    if sval in BOOL_TRUE:
        return True
    if sval in BOOL_FALSE:
        return False
    raise ValueError("not a boolean (%s)" % value)
#
# end of function

#------------------------------------------------------------------------------
#
# functions listed here: line-delimited record files
#
#------------------------------------------------------------------------------

def dumps_record(record):
    """
    function: dumps_record

    arguments:
     record: a json-serializable dict

    return:
     one line of text (no newline) in canonical form

    description:
     keys are sorted and no whitespace is emitted so that equal records
     produce equal bytes.
    """
    return json.dumps(record, sort_keys=True, separators=(",", ":"),
                      ensure_ascii=False)
#
# end of function

def read_records(fname, tolerate_partial_tail=False):
    """
    function: read_records

    arguments:
     fname: a line-delimited record file
     tolerate_partial_tail: if True, an unparseable last line is dropped
                            (a writer was killed mid-line)

    return:
     a list of (line number, dict) tuples

    description:
     blank lines are skipped. any other malformed line raises a ValueError
     that names the line number.
    """

    # display informational message
    #
    if dbgl == ndt.FULL:
        logger.debug("reading records ({})", fname)

    with open(fname, MODE_READ_TEXT, encoding=DEF_CHAR_ENCODING) as fp:
        lines = fp.read().split(DELIM_NEWLINE)

    # find the last non-blank line so we know what a tail is
    #
    last = max((i for i, l in enumerate(lines) if l.strip()), default=-1)

    records = []
    for i, line in enumerate(lines):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            if not isinstance(obj, dict):
                raise ValueError("record is not an object")
        except ValueError as e:
            if tolerate_partial_tail and i == last:
                logger.warning("dropping partial last line {} ({})",
                               i + 1, fname)
                break
            raise ValueError("malformed record at line %d (%s): %s" %
                             (i + 1, fname, e)) from e
        records.append((i + 1, obj))

    # exit gracefully
    #
    return records
#
# end of function

def append_record(fname, record):
    """
    function: append_record

    arguments:
     fname: a line-delimited record file
     record: a dict

    return:
     a boolean value indicating status

    description:
     appends are serialized across threads and flushed line by line.
    """
    line = dumps_record(record) + DELIM_NEWLINE
    with _append_lock:
        with open(fname, MODE_APPEND_TEXT, encoding=DEF_CHAR_ENCODING) as fp:
            fp.write(line)
            fp.flush()
    return True
#
# end of function

def write_records(fname, records):
    """
    function: write_records

    arguments:
     fname: output filename
     records: an iterable of dicts

    return:
     a boolean value indicating status

    description:
     the file is written to a temporary name and moved into place so that
     readers never see a half-written file.
    """
    text = DELIM_NULL.join(dumps_record(r) + DELIM_NEWLINE for r in records)
    write_atomic(fname, text.encode(DEF_CHAR_ENCODING))
    return True
#
# end of function

def write_atomic(fname, data):
    """
    function: write_atomic

    arguments:
     fname: output filename
     data: bytes

    return:
     a boolean value indicating status
    """
    odir = os.path.dirname(os.path.abspath(fname))
    make_dir(odir)
    fd, tmp = tempfile.mkstemp(dir=odir, prefix=".tmp_")
    try:
        with os.fdopen(fd, MODE_WRITE_BINARY) as fp:
            fp.write(data)
        os.replace(tmp, fname)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise

    # exit gracefully
    #
    return True
#
# end of function

#
# end of file
