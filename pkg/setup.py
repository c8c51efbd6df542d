from setuptools import find_packages, setup

setup(name='phantom_insight',
      version='0.1',
      description='Video camouflaged object detection with temporal and spatial clues',
      packages=find_packages(exclude=['tests']),
      install_requires=open('requirements.txt').read().splitlines(),
      entry_points={'console_scripts': ['phantom = phantom_insight.main:main']},
      zip_safe=False)
