# This file's presence with the type: ignore comment will make mypy ignore all files in
# the tests directory
