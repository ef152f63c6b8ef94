from setuptools import setup

setup(name='FbOpt',
      version='0.1',
      description='Sampled-data feedback optimization with tracking certificates',
      packages=['fbopt', 'fbopt.lang_parser'],
      install_requires=['lark', 'numpy', 'scipy'],
     )
