major, minor, patch = 0, 1, 0
__version_info__ = (major, minor, patch)
__version__ = '.'.join(str(i) for i in __version_info__)
